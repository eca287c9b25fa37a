use std::path::PathBuf;
use std::process::ExitCode;

use bcgibbs::dynamic::{Algorithm, Budget, RunConfig};
use bcgibbs::exec::Exec;
use bcgibbs::experiment::{generate_model, run_experiment, write_model, ExperimentError, ExperimentSpec, ModelKind, ModelSpec};
use clap::{Args, Parser, Subcommand};

/// Blocked and collapsed Gibbs samplers for discrete Markov networks.
#[derive(Parser, Debug)]
#[command(name = "bcgibbs", version, args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Cmd>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write a synthetic Ising model and evidence file.
    Generate(GenerateArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Network in UAI MARKOV format.
    #[arg(long)]
    net: Option<PathBuf>,
    /// Evidence file.
    #[arg(long)]
    evid: Option<PathBuf>,
    /// gibbs, sbg, sbcg, dbcg or all; comma separated.
    #[arg(long, default_value = "all", value_delimiter = ',')]
    algo: Vec<String>,
    #[arg(long, default_value_t = 8)]
    alpha: usize,
    #[arg(long, default_value_t = 8)]
    beta: usize,
    /// Defaults to 50 * alpha.
    #[arg(long)]
    gamma: Option<usize>,
    /// Samples per round (M).
    #[arg(long, default_value_t = 1000)]
    update_interval: usize,
    /// Number of rounds.
    #[arg(long, conflicts_with = "seconds")]
    rounds: Option<usize>,
    /// Wall-clock budget per run.
    #[arg(long)]
    seconds: Option<f64>,
    #[arg(long, default_value = "0", value_delimiter = ',')]
    seed: Vec<u64>,
    /// Samples discarded at the start of each round.
    #[arg(long, default_value_t = 0)]
    burnin: usize,
    /// Multiplicative growth of M per round.
    #[arg(long, default_value_t = 1.0)]
    growth: f64,
    /// Minimum spacing of trace snapshots in wall-clock mode.
    #[arg(long, default_value_t = 0.25)]
    trace_interval: f64,
    /// Score against exact marginals from variable elimination.
    #[arg(long)]
    exact: bool,
    /// Run (algorithm, seed) cells one after another.
    #[arg(long)]
    sequential: bool,
    /// Reject non-canonical whitespace in input files.
    #[arg(long)]
    strict: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, default_value = "grid")]
    kind: ModelKind,
    #[arg(long, default_value_t = 10)]
    rows: usize,
    #[arg(long, default_value_t = 10)]
    cols: usize,
    /// Coupling range LO,HI.
    #[arg(long, default_value = "-1,1", value_parser = parse_range, allow_hyphen_values = true)]
    coupling: (f64, f64),
    /// Unary field range LO,HI.
    #[arg(long, default_value = "0,0", value_parser = parse_range, allow_hyphen_values = true)]
    field: (f64, f64),
    /// Number of evidence nodes.
    #[arg(long, default_value_t = 0)]
    evidence: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// File stem; defaults to `<kind>_<rows>x<cols>_seed<seed>`.
    #[arg(long)]
    name: Option<String>,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{lo}: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{hi}: {e}"))?;
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(format!("invalid range {lo},{hi}"));
    }
    Ok((lo, hi))
}

fn parse_algorithms(names: &[String]) -> Result<Vec<Algorithm>, String> {
    let mut out = Vec::new();
    for name in names {
        if name == "all" {
            out.extend(Algorithm::ALL);
        } else {
            out.push(name.parse()?);
        }
    }
    out.dedup();
    Ok(out)
}

enum Failure {
    Config(String),
    Experiment(ExperimentError),
}

impl Failure {
    fn report(&self) -> ExitCode {
        let (msg, code) = match self {
            Failure::Config(m) => (format!("invalid configuration: {m}"), 4),
            Failure::Experiment(e) => (e.to_string(), e.exit_code()),
        };
        eprintln!("error: {msg}");
        ExitCode::from(code as u8)
    }
}

fn generate(args: GenerateArgs) -> Result<(), Failure> {
    if args.rows == 0 || args.cols == 0 {
        return Err(Failure::Config("rows and cols must be positive".into()));
    }
    let spec = ModelSpec {
        kind: args.kind,
        rows: args.rows,
        cols: args.cols,
        coupling: args.coupling,
        field: args.field,
        evidence: args.evidence,
        seed: args.seed,
    };
    let (net, evidence) = generate_model(&spec);
    let kind = format!("{:?}", args.kind).to_lowercase();
    let stem = args
        .name
        .unwrap_or_else(|| format!("{kind}_{}x{}_seed{}", args.rows, args.cols, args.seed));
    let (n, e) = write_model(&args.out, &stem, &net, &evidence).map_err(Failure::Experiment)?;
    println!("{}", n.display());
    println!("{}", e.display());
    Ok(())
}

fn experiment(args: RunArgs) -> Result<(), Failure> {
    let net = args.net.ok_or_else(|| Failure::Config("--net is required".into()))?;
    let algorithms = parse_algorithms(&args.algo).map_err(Failure::Config)?;
    let budget = match (args.rounds, args.seconds) {
        (Some(r), None) => Budget::Rounds(r),
        (None, Some(s)) => Budget::Seconds(s),
        (None, None) => Budget::Rounds(100),
        (Some(_), Some(_)) => return Err(Failure::Config("--rounds and --seconds are exclusive".into())),
    };
    let config = RunConfig {
        alpha: args.alpha,
        beta: args.beta,
        gamma: args.gamma.unwrap_or(50 * args.alpha),
        m: args.update_interval,
        budget,
        burn_in: args.burnin,
        growth: args.growth,
        trace_interval: args.trace_interval,
        exec: Exec::Sequential,
        ..RunConfig::default()
    };
    let spec = ExperimentSpec {
        network: net,
        evidence: args.evid,
        algorithms,
        config,
        seeds: args.seed,
        exact: args.exact,
        out: args.out,
        exec: if args.sequential { Exec::Sequential } else { Exec::Parallel },
        strict: args.strict,
    };
    let report = run_experiment(&spec).map_err(Failure::Experiment)?;
    println!("algo,seed,final_avg_hellinger,samples,rounds");
    for s in &report.summaries {
        println!("{},{},{},{},{}", s.algo, s.seed, s.final_avg_hellinger, s.samples, s.rounds);
    }
    eprintln!("wrote {} files to {}", report.files.len(), spec.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Some(Cmd::Generate(g)) => generate(g),
        None => experiment(cli.run),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}
