//! Benchmark harness: synthetic model generation, error scoring against
//! exact marginals, and multi-run experiments writing CSV traces.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::dynamic::{run, Algorithm, Budget, RunConfig, RunError, RunResult, TraceSnapshot};
use crate::elim::{exact_marginals_with, ElimError, Feasibility};
use crate::exec::Exec;
use crate::model::{Assignment, Factor, MarkovNetwork, ModelError};
use crate::partition::hellinger;
use crate::uai_io::{
    parse_evidence_bytes, parse_network_bytes, write_convergence_csv, write_evidence, write_marginals, write_network,
    ConvergenceRow, ParseError, ParseOptions,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: ParseError },
    #[error("evidence does not fit the network: {0}")]
    Evidence(ModelError),
    #[error("exact marginals are infeasible for this network ({0}); rerun without --exact to evaluate by properties only")]
    Infeasible(ElimError),
    #[error(transparent)]
    Config(RunError),
    #[error("run failed: {0}")]
    Run(RunError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("estimates cover {found} variables, exact marginals {expected}")]
    Mismatch { expected: usize, found: usize },
}

impl ExperimentError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Parse { .. } | ExperimentError::Evidence(_) => 2,
            ExperimentError::Infeasible(_) => 3,
            ExperimentError::Config(_) => 4,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Average Hellinger distance to `exact` over the non-evidence variables.
pub fn average_hellinger(estimates: &[Vec<f64>], exact: &[Vec<f64>], net: &MarkovNetwork) -> Result<f64, ExperimentError> {
    if estimates.len() != exact.len() {
        return Err(ExperimentError::Mismatch {
            expected: exact.len(),
            found: estimates.len(),
        });
    }
    let universe = net.sampling_universe();
    if universe.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = universe.iter().map(|&v| hellinger(&estimates[v], &exact[v])).sum();
    Ok(total / universe.len() as f64)
}

/// Average Hellinger error of every trace snapshot.
pub fn score_run(trace: &[TraceSnapshot], exact: &[Vec<f64>], net: &MarkovNetwork) -> Result<Vec<f64>, ExperimentError> {
    trace.iter().map(|s| average_hellinger(&s.estimates, exact, net)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Grid,
    Chain,
    Random,
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "grid" => Ok(ModelKind::Grid),
            "chain" => Ok(ModelKind::Chain),
            "random" => Ok(ModelKind::Random),
            _ => Err(format!("unknown model kind `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub rows: usize,
    pub cols: usize,
    /// Coupling strengths are drawn uniformly from this range.
    pub coupling: (f64, f64),
    /// Unary field strengths are drawn uniformly from this range.
    pub field: (f64, f64),
    pub evidence: usize,
    pub seed: u64,
}

fn ising_pair(a: usize, b: usize, w: f64) -> Factor {
    Factor::new(vec![a, b], vec![2, 2], vec![w.exp(), (-w).exp(), (-w).exp(), w.exp()]).expect("positive table")
}

fn draw(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

/// Binary Ising-style model plus seeded evidence. Grid: `rows x cols`;
/// chain: `rows * cols` variables in a line; random: `rows * cols`
/// variables, each linked to two random earlier ones.
pub fn generate_model(spec: &ModelSpec) -> (MarkovNetwork, Assignment) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.rows * spec.cols;
    let mut edges = Vec::new();
    match spec.kind {
        ModelKind::Grid => {
            for r in 0..spec.rows {
                for c in 0..spec.cols {
                    let v = r * spec.cols + c;
                    if c + 1 < spec.cols {
                        edges.push((v, v + 1));
                    }
                    if r + 1 < spec.rows {
                        edges.push((v, v + spec.cols));
                    }
                }
            }
        }
        ModelKind::Chain => edges.extend((1..n).map(|v| (v - 1, v))),
        ModelKind::Random => {
            for v in 1..n {
                let k = v.min(2);
                let mut picked = sample(&mut rng, v, k).into_vec();
                picked.sort_unstable();
                edges.extend(picked.into_iter().map(|u| (u, v)));
            }
        }
    }
    let mut factors = Vec::new();
    for v in 0..n {
        let h = draw(&mut rng, spec.field);
        if h != 0.0 {
            factors.push(Factor::new(vec![v], vec![2], vec![h.exp(), (-h).exp()]).expect("positive table"));
        }
    }
    for (a, b) in edges {
        let w = draw(&mut rng, spec.coupling);
        factors.push(ising_pair(a, b, w));
    }
    let net = MarkovNetwork::new(vec![2; n], factors).expect("consistent model");
    let mut evidence = Assignment::new();
    let mut chosen = sample(&mut rng, n, spec.evidence.min(n)).into_vec();
    chosen.sort_unstable();
    for v in chosen {
        evidence.insert(v, rng.random_range(0..2));
    }
    (net, evidence)
}

/// Writes `<stem>.uai` and `<stem>.uai.evid` into `dir`; returns both paths.
pub fn write_model(dir: &Path, stem: &str, net: &MarkovNetwork, evidence: &Assignment) -> Result<(PathBuf, PathBuf), ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let net_path = dir.join(format!("{stem}.uai"));
    let evid_path = dir.join(format!("{stem}.uai.evid"));
    fs::write(&net_path, write_network(net)).map_err(io_err(&net_path))?;
    fs::write(&evid_path, write_evidence(evidence)).map_err(io_err(&evid_path))?;
    Ok((net_path, evid_path))
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub network: PathBuf,
    pub evidence: Option<PathBuf>,
    pub algorithms: Vec<Algorithm>,
    /// Template for every run; algorithm and seed are overwritten.
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub exact: bool,
    pub out: PathBuf,
    /// How (algorithm, seed) cells are scheduled.
    pub exec: Exec,
    pub strict: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub algo: Algorithm,
    pub seed: u64,
    pub final_avg_hellinger: f64,
    pub samples: u64,
    pub rounds: usize,
    pub partition_changes: usize,
    pub zero_mass_steps: u64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub summaries: Vec<CellSummary>,
    pub results: Vec<(Algorithm, u64, RunResult)>,
    pub exact: Option<Vec<Vec<f64>>>,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Metadata<'a> {
    version: String,
    network: &'a Path,
    evidence: Option<&'a Path>,
    algorithms: Vec<&'static str>,
    seeds: &'a [u64],
    config: &'a RunConfig,
    exact: bool,
    deviations: Vec<String>,
}

fn version() -> String {
    let described = Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string());
    match described {
        Some(d) if !d.is_empty() => format!("{} ({d})", env!("CARGO_PKG_VERSION")),
        _ => env!("CARGO_PKG_VERSION").to_string(),
    }
}

/// Loads an evidence-applied network from UAI files.
pub fn load(network: &Path, evidence: Option<&Path>, strict: bool) -> Result<MarkovNetwork, ExperimentError> {
    let bytes = fs::read(network).map_err(io_err(network))?;
    let net = parse_network_bytes(&bytes, ParseOptions { strict }).map_err(|source| ExperimentError::Parse {
        path: network.to_path_buf(),
        source,
    })?;
    match evidence {
        None => Ok(net),
        Some(path) => {
            let bytes = fs::read(path).map_err(io_err(path))?;
            let e = parse_evidence_bytes(&bytes).map_err(|source| ExperimentError::Parse {
                path: path.to_path_buf(),
                source,
            })?;
            net.with_evidence(e).map_err(ExperimentError::Evidence)
        }
    }
}

/// Runs every (algorithm, seed) cell and writes per-cell traces and
/// marginals, a summary, a plot script, and metadata into `spec.out`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport, ExperimentError> {
    spec.config.validate().map_err(ExperimentError::Config)?;
    if spec.algorithms.is_empty() || spec.seeds.is_empty() {
        return Err(ExperimentError::Config(RunError::Config(
            "need at least one algorithm and one seed".into(),
        )));
    }
    let net = load(&spec.network, spec.evidence.as_deref(), spec.strict)?;
    let exact = if spec.exact {
        Some(exact_marginals_with(&net, Feasibility::default()).map_err(ExperimentError::Infeasible)?)
    } else {
        None
    };
    let cells: Vec<(Algorithm, u64)> = spec
        .algorithms
        .iter()
        .flat_map(|&a| spec.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let outcomes = spec.exec.map(&cells, |&(algorithm, seed)| {
        let config = RunConfig {
            algorithm,
            seed,
            ..spec.config.clone()
        };
        run(&net, &config)
    });
    fs::create_dir_all(&spec.out).map_err(io_err(&spec.out))?;
    let mut files = Vec::new();
    let mut summaries = Vec::new();
    let mut results = Vec::new();
    for (&(algo, seed), outcome) in cells.iter().zip(outcomes) {
        let result = outcome.map_err(ExperimentError::Run)?;
        let errors = match &exact {
            Some(e) => score_run(&result.trace, e, &net)?,
            None => vec![f64::NAN; result.trace.len()],
        };
        let rows: Vec<ConvergenceRow> = result
            .trace
            .iter()
            .zip(&errors)
            .map(|(s, &err)| ConvergenceRow {
                time_s: s.time_s,
                samples: s.samples,
                avg_hellinger: err,
                algo: algo.tag().to_string(),
                seed,
            })
            .collect();
        let trace_path = spec.out.join(format!("trace_{algo}_seed{seed}.csv"));
        fs::write(&trace_path, write_convergence_csv(&rows)).map_err(io_err(&trace_path))?;
        let mar_path = spec.out.join(format!("marginals_{algo}_seed{seed}.MAR"));
        let mar = write_marginals(&result.estimates).expect("estimates are distributions");
        fs::write(&mar_path, mar + "\n").map_err(io_err(&mar_path))?;
        files.push(trace_path);
        files.push(mar_path);
        summaries.push(CellSummary {
            algo,
            seed,
            final_avg_hellinger: errors.last().copied().unwrap_or(f64::NAN),
            samples: result.diagnostics.samples,
            rounds: result.diagnostics.rounds,
            partition_changes: result.diagnostics.partition_changes,
            zero_mass_steps: result.diagnostics.zero_mass_steps,
        });
        results.push((algo, seed, result));
    }

    let summary_path = spec.out.join("summary.csv");
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in &summaries {
        w.serialize(s).expect("in-memory write");
    }
    let bytes = w.into_inner().expect("in-memory flush");
    fs::write(&summary_path, bytes).map_err(io_err(&summary_path))?;
    files.push(summary_path);

    let plot_path = spec.out.join("plot.py");
    fs::write(&plot_path, PLOT_SCRIPT).map_err(io_err(&plot_path))?;
    files.push(plot_path);

    let mut deviations = vec![format!("burn-in per round: {}", spec.config.burn_in)];
    if let Some((_, _, r)) = results.iter().find(|(a, _, _)| *a == Algorithm::Dbcg) {
        if let Some(policy) = r.diagnostics.pair_policy {
            deviations.push(format!(
                "pair tracking: {} ({} pairs)",
                serde_json::to_value(policy).expect("tag").as_str().unwrap_or_default(),
                r.diagnostics.tracked_pairs
            ));
        }
    }
    if matches!(spec.config.budget, Budget::Rounds(_)) {
        deviations.push("time_s is the round index (round budget)".into());
    }
    let metadata = Metadata {
        version: version(),
        network: &spec.network,
        evidence: spec.evidence.as_deref(),
        algorithms: spec.algorithms.iter().map(|a| a.tag()).collect(),
        seeds: &spec.seeds,
        config: &spec.config,
        exact: spec.exact,
        deviations,
    };
    let meta_path = spec.out.join("metadata.json");
    let json = serde_json::to_string_pretty(&metadata).expect("serializable metadata");
    fs::write(&meta_path, json + "\n").map_err(io_err(&meta_path))?;
    files.push(meta_path);

    Ok(ExperimentReport {
        summaries,
        results,
        exact,
        files,
    })
}

const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
# Average Hellinger error against time, one curve per algorithm (median over seeds).
import csv
import glob
import os
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
runs = defaultdict(list)
for path in sorted(glob.glob(os.path.join(here, "trace_*.csv"))):
    with open(path) as f:
        rows = list(csv.DictReader(f))
    if rows:
        runs[rows[0]["algo"]].append(rows)

fig, ax = plt.subplots(figsize=(6, 4))
for algo, traces in sorted(runs.items()):
    n = min(len(t) for t in traces)
    xs = [float(traces[0][i]["time_s"]) for i in range(n)]
    ys = []
    for i in range(n):
        vals = sorted(float(t[i]["avg_hellinger"]) for t in traces)
        ys.append(vals[len(vals) // 2])
    ax.plot(xs, ys, label=algo)
ax.set_xlabel("time (s)")
ax.set_ylabel("average Hellinger distance")
ax.set_yscale("log")
ax.legend()
fig.tight_layout()
out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(here, "error_vs_time.png")
fig.savefig(out, dpi=120)
print(out)
"#;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::PrimalGraph;
    use crate::uai_io::parse_network;

    fn spec(kind: ModelKind, rows: usize, cols: usize) -> ModelSpec {
        ModelSpec {
            kind,
            rows,
            cols,
            coupling: (-1.0, 1.0),
            field: (0.0, 0.0),
            evidence: 0,
            seed: 3,
        }
    }

    #[test]
    fn grid_and_chain_shapes() {
        let (net, _) = generate_model(&spec(ModelKind::Grid, 3, 3));
        assert_eq!(net.num_variables(), 9);
        assert_eq!(net.factors().len(), 12);
        let (chain, _) = generate_model(&spec(ModelKind::Chain, 1, 5));
        assert_eq!(chain.factors().len(), 4);
        assert_eq!(PrimalGraph::from_network(&chain).treewidth_ub(), 1);
        let (random, _) = generate_model(&spec(ModelKind::Random, 2, 5));
        assert_eq!(random.factors().len(), 1 + 2 * 8);
    }

    #[test]
    fn generation_is_seeded_and_parses_back() {
        let s = ModelSpec {
            evidence: 3,
            field: (-0.5, 0.5),
            ..spec(ModelKind::Grid, 4, 4)
        };
        let (a, ea) = generate_model(&s);
        let (b, eb) = generate_model(&s);
        assert_eq!(write_network(&a), write_network(&b));
        assert_eq!(ea, eb);
        assert_eq!(ea.len(), 3);
        let back = parse_network(&write_network(&a)).unwrap();
        assert_eq!(write_network(&back), write_network(&a));
        assert_eq!(PrimalGraph::from_network(&back).num_edges(), 24);
    }

    #[test]
    fn scoring_examples() {
        let net = MarkovNetwork::new(vec![2], vec![]).unwrap();
        let exact = vec![vec![1.0, 0.0]];
        assert_eq!(average_hellinger(&exact, &exact, &net).unwrap(), 0.0);
        assert!((average_hellinger(&[vec![0.0, 1.0]], &exact, &net).unwrap() - 1.0).abs() < 1e-12);
        let h = average_hellinger(&[vec![0.25, 0.75]], &[vec![0.5, 0.5]], &net).unwrap();
        assert!((h - 0.1845919).abs() < 1e-7);
        assert!(average_hellinger(&[], &exact, &net).is_err());
    }

    #[test]
    fn exit_codes() {
        let parse = ExperimentError::Parse {
            path: "x".into(),
            source: parse_network("nope").unwrap_err(),
        };
        assert_eq!(parse.exit_code(), 2);
        assert_eq!(ExperimentError::Infeasible(ElimError::ZeroMass).exit_code(), 3);
        assert_eq!(ExperimentError::Config(RunError::Config("x".into())).exit_code(), 4);
    }
}
