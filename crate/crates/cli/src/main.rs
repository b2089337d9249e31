use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rectsieve::concepts::{gen_target, Concept, ConceptKind, GenParams};
use rectsieve::grid::Model;
use rectsieve::harness::{
    estimate_error, run_experiment, sweep, Algo, EvalMode, ExperimentConfig, SweepSpec,
};
use rectsieve::stream::Streams;
use rectsieve::{Error, Result};

#[derive(Parser)]
#[command(
    name = "rectsieve",
    version,
    about = "Learn unions of rectangles over [b]^n from membership queries"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random target concept and write it as JSON.
    Gen(GenArgs),
    /// Learn a model for a target concept; write model and report JSON.
    Learn(LearnArgs),
    /// Measure a model's error against a target.
    Eval(EvalArgs),
    /// Run a parameter sweep into a CSV file.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenArgs {
    /// union_rect | maj_parity | maj_or_rect
    #[arg(long)]
    kind: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    b: u64,
    /// Gate count (odd for majority kinds).
    #[arg(long)]
    s: usize,
    /// Literals per gate.
    #[arg(long)]
    r: usize,
    /// Make rectangles pairwise disjoint.
    #[arg(long)]
    disjoint: bool,
    /// Use twisted literals (coprime multiplier) where applicable.
    #[arg(long)]
    twist: bool,
    #[arg(long)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct LearnArgs {
    /// Path to the target concept JSON.
    #[arg(long)]
    target: PathBuf,
    /// ghs | grid
    #[arg(long)]
    algo: String,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    gamma_start: Option<f64>,
    #[arg(long)]
    gamma_min: Option<f64>,
    #[arg(long)]
    seed: u64,
    /// Where to write the learned model JSON.
    #[arg(short, long)]
    output: PathBuf,
    /// Where to write the run report JSON.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// exhaustive | sample
    #[arg(long)]
    mode: String,
    /// Sample count (sample mode only).
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    /// Path to the sweep spec JSON.
    #[arg(long)]
    spec: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
}

fn parse_kind(s: &str) -> Result<ConceptKind> {
    match s {
        "union_rect" => Ok(ConceptKind::UnionRect),
        "maj_parity" => Ok(ConceptKind::MajParity),
        "maj_or_rect" => Ok(ConceptKind::MajOrRect),
        other => Err(Error::InvalidParam(format!(
            "unknown kind {other:?}, expected union_rect, maj_parity, or maj_or_rect"
        ))),
    }
}

fn cmd_gen(args: &GenArgs) -> Result<bool> {
    let params = GenParams {
        kind: parse_kind(&args.kind)?,
        n: args.n,
        b: args.b,
        s: args.s,
        r: args.r,
        disjoint: args.disjoint,
        twist: args.twist,
    };
    let mut rng = Streams::new(args.seed).stream("gen", 0);
    let target = gen_target(&params, &mut rng)?;
    fs::write(&args.output, target.to_json())?;
    println!(
        "wrote {} (kind={}, n={}, b={}, gates={})",
        args.output.display(),
        args.kind,
        target.n,
        target.b,
        target.gates.len()
    );
    Ok(true)
}

fn cmd_learn(args: &LearnArgs) -> Result<bool> {
    let target = Concept::from_json(&fs::read_to_string(&args.target)?)?;
    let algo: Algo = args.algo.parse()?;
    let mut config = ExperimentConfig::new(target, algo, args.epsilon, args.delta, args.seed);
    if let Some(g) = args.gamma_start {
        config.gamma_start = g;
    }
    if let Some(g) = args.gamma_min {
        config.gamma_min = g;
    }
    let report = run_experiment(&config, Some(&args.output), Some(&args.report))?;
    match &report.error {
        Some(err) => println!(
            "status={} stages={} queries={} gamma={} error={}{}",
            report.status,
            report.stages,
            report.queries,
            report.gamma,
            err.value,
            if err.half_width > 0.0 {
                format!(" (+/- {})", err.half_width)
            } else {
                String::new()
            }
        ),
        None => println!("status={} queries={}", report.status, report.queries),
    }
    Ok(report.is_ok())
}

fn cmd_eval(args: &EvalArgs) -> Result<bool> {
    let target = Concept::from_json(&fs::read_to_string(&args.target)?)?;
    let model = Model::from_json(&fs::read_to_string(&args.model)?)?;
    let mode = match args.mode.as_str() {
        "exhaustive" => EvalMode::Exhaustive,
        "sample" => EvalMode::Sample {
            m: args.m.unwrap_or(1 << 16),
        },
        other => {
            return Err(Error::InvalidParam(format!(
                "unknown mode {other:?}, expected exhaustive or sample"
            )))
        }
    };
    let estimate = estimate_error(&target, &model, mode, args.seed)?;
    println!("{}", serde_json::to_string(&estimate)?);
    Ok(true)
}

fn cmd_sweep(args: &SweepArgs) -> Result<bool> {
    let spec = SweepSpec::from_json(&fs::read_to_string(&args.spec)?)?;
    let summary = sweep(&spec, &args.output)?;
    println!(
        "wrote {} ({} rows, {} failed)",
        args.output.display(),
        summary.rows,
        summary.failures
    );
    Ok(summary.failures == 0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Learn(args) => cmd_learn(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
