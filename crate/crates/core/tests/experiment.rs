use std::fs;
use std::path::Path;

use bcgibbs::dynamic::{Algorithm, Budget, RunConfig};
use bcgibbs::exec::Exec;
use bcgibbs::experiment::{
    average_hellinger, generate_model, run_experiment, score_run, write_model, ExperimentError, ExperimentSpec,
    ModelKind, ModelSpec,
};
use bcgibbs::graph::PrimalGraph;
use bcgibbs::uai_io::parse_network;

fn model(dir: &Path, kind: ModelKind, rows: usize, cols: usize, evidence: usize) -> (std::path::PathBuf, std::path::PathBuf) {
    let spec = ModelSpec {
        kind,
        rows,
        cols,
        coupling: (-1.0, 1.0),
        field: (-0.2, 0.2),
        evidence,
        seed: 5,
    };
    let (net, ev) = generate_model(&spec);
    write_model(dir, "model", &net, &ev).unwrap()
}

fn spec(net: &Path, evid: &Path, out: &Path, exact: bool) -> ExperimentSpec {
    ExperimentSpec {
        network: net.to_path_buf(),
        evidence: Some(evid.to_path_buf()),
        algorithms: vec![Algorithm::Gibbs, Algorithm::Dbcg],
        config: RunConfig {
            alpha: 2,
            beta: 2,
            gamma: 20,
            m: 40,
            budget: Budget::Rounds(4),
            exec: Exec::Sequential,
            ..RunConfig::default()
        },
        seeds: vec![1, 2],
        exact,
        out: out.to_path_buf(),
        exec: Exec::Parallel,
        strict: false,
    }
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn two_algorithms_two_seeds_write_every_file() {
    let tmp = tempfile::tempdir().unwrap();
    let (net, evid) = model(tmp.path(), ModelKind::Grid, 3, 3, 1);
    let out = tmp.path().join("out");
    let report = run_experiment(&spec(&net, &evid, &out, true)).unwrap();
    let names = listing(&out);
    let traces: Vec<_> = names.iter().filter(|n| n.starts_with("trace_")).collect();
    assert_eq!(traces.len(), 4);
    for n in ["summary.csv", "plot.py", "metadata.json", "trace_dbcg_seed2.csv", "marginals_gibbs_seed1.MAR"] {
        assert!(names.iter().any(|x| x == n), "missing {n}");
    }
    assert_eq!(report.summaries.len(), 4);
    assert!(report.summaries.iter().all(|s| s.final_avg_hellinger.is_finite()));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["seeds"], serde_json::json!([1, 2]));
    assert!(!meta["deviations"].as_array().unwrap().is_empty());
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (net, evid) = model(tmp.path(), ModelKind::Grid, 3, 4, 2);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_experiment(&spec(&net, &evid, &a, true)).unwrap();
    let mut second = spec(&net, &evid, &b, true);
    second.exec = Exec::Sequential;
    run_experiment(&second).unwrap();
    assert_eq!(listing(&a), listing(&b));
    for name in listing(&a) {
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name}");
    }
}

#[test]
fn without_exact_errors_are_nan() {
    let tmp = tempfile::tempdir().unwrap();
    let (net, evid) = model(tmp.path(), ModelKind::Chain, 1, 6, 1);
    let out = tmp.path().join("out");
    let report = run_experiment(&spec(&net, &evid, &out, false)).unwrap();
    assert!(report.exact.is_none());
    assert!(report.summaries.iter().all(|s| s.final_avg_hellinger.is_nan()));
    let trace = fs::read_to_string(out.join("trace_gibbs_seed1.csv")).unwrap();
    assert!(trace.lines().skip(1).all(|l| l.to_lowercase().contains("nan")));
}

#[test]
fn infeasible_oracle_is_a_hard_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (net, evid) = model(tmp.path(), ModelKind::Grid, 25, 25, 0);
    let out = tmp.path().join("out");
    let err = run_experiment(&spec(&net, &evid, &out, true)).unwrap_err();
    assert!(matches!(err, ExperimentError::Infeasible(_)));
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("without --exact"));
}

#[test]
fn bad_inputs_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let (net, evid) = model(tmp.path(), ModelKind::Grid, 2, 2, 0);
    let broken = tmp.path().join("broken.uai");
    fs::write(&broken, "MARKOV\n2\n2 two\n").unwrap();
    let err = run_experiment(&spec(&broken, &evid, tmp.path(), false)).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let mut bad = spec(&net, &evid, tmp.path(), false);
    bad.config.burn_in = bad.config.m;
    assert_eq!(run_experiment(&bad).unwrap_err().exit_code(), 4);
    let missing = tmp.path().join("missing.uai");
    assert_eq!(run_experiment(&spec(&missing, &evid, tmp.path(), false)).unwrap_err().exit_code(), 1);
}

#[test]
fn generated_models_have_declared_structure() {
    let grid = ModelSpec {
        kind: ModelKind::Grid,
        rows: 3,
        cols: 3,
        coupling: (-1.0, 1.0),
        field: (0.0, 0.0),
        evidence: 0,
        seed: 1,
    };
    let (net, _) = generate_model(&grid);
    assert_eq!(net.num_variables(), 9);
    assert_eq!(net.factors().len(), 12);
    let chain = ModelSpec { kind: ModelKind::Chain, rows: 1, cols: 5, ..grid.clone() };
    let (net, _) = generate_model(&chain);
    assert_eq!(net.factors().len(), 4);
    assert_eq!(PrimalGraph::from_network(&net).treewidth_ub(), 1);

    let tmp = tempfile::tempdir().unwrap();
    let with_ev = ModelSpec { evidence: 3, field: (-0.5, 0.5), ..grid };
    let (n1, e1) = model_files(tmp.path(), "a", &with_ev);
    let (n2, e2) = model_files(tmp.path(), "b", &with_ev);
    assert_eq!(fs::read(&n1).unwrap(), fs::read(&n2).unwrap());
    assert_eq!(fs::read(&e1).unwrap(), fs::read(&e2).unwrap());
    let parsed = parse_network(&fs::read_to_string(&n1).unwrap()).unwrap();
    assert_eq!(parsed.factors().len(), 12 + 9);
}

fn model_files(dir: &Path, stem: &str, spec: &ModelSpec) -> (std::path::PathBuf, std::path::PathBuf) {
    let (net, ev) = generate_model(spec);
    write_model(dir, stem, &net, &ev).unwrap()
}

#[test]
fn exact_oracle_scores_zero_against_itself() {
    let tmp = tempfile::tempdir().unwrap();
    let (net, evid) = model(tmp.path(), ModelKind::Grid, 3, 3, 2);
    let out = tmp.path().join("out");
    let report = run_experiment(&spec(&net, &evid, &out, true)).unwrap();
    let exact = report.exact.unwrap();
    let (_, _, result) = &report.results[0];
    let loaded = bcgibbs::experiment::load(&net, Some(&evid), false).unwrap();
    assert_eq!(average_hellinger(&exact, &exact, &loaded).unwrap(), 0.0);
    let scores = score_run(&result.trace, &exact, &loaded).unwrap();
    assert_eq!(scores.len(), result.trace.len());
}
