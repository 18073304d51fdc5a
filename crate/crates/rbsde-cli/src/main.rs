mod config;
mod convergence;
mod report;
mod scenarios;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Scenario;
use convergence::Axis;

#[derive(Parser)]
#[command(
    name = "rbsde",
    about = "Reflected-BSDE laboratory: Monte Carlo schemes, obstacle-problem \
             finite differences, and mixed zero-sum games",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides experiment.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides experiment.out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress progress output; artifacts are still written.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct ConvergeArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Refinement axis: N, M, nx or penalty.
    #[arg(long)]
    axis: String,
    /// Number of doublings to run.
    #[arg(long, default_value_t = 4)]
    points: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Backward LSMC solve (scenarios: bsde, double-barrier, log-ode).
    SolveBsde(RunArgs),
    /// Finite-difference obstacle solve (scenario: pde).
    SolvePde(RunArgs),
    /// LSMC vs finite-difference agreement (scenario: cross-validate).
    CrossValidate(RunArgs),
    /// Penalization schedule run (scenario: penalized).
    Penalize(RunArgs),
    /// Mixed zero-sum game solve and saddle verification (scenarios: game, zero-game).
    Game(RunArgs),
    /// Convergence study along one axis of any scenario.
    Converge(ConvergeArgs),
}

fn load_config(args: &RunArgs, allowed: &[Scenario]) -> Result<config::ResolvedConfig, String> {
    let file = config::load(&args.config).map_err(|e| e.to_string())?;
    let mut cfg = config::resolve(file).map_err(|e| e.to_string())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.display().to_string();
    }
    if !allowed.is_empty() && !allowed.contains(&cfg.scenario) {
        return Err(format!(
            "scenario '{}' does not match this subcommand (expected one of: {})",
            cfg.scenario_name,
            allowed.iter().map(|s| s.label()).collect::<Vec<_>>().join(", ")
        ));
    }
    Ok(cfg)
}

fn run(args: &RunArgs, allowed: &[Scenario]) -> ExitCode {
    let cfg = match load_config(args, allowed) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("rbsde: {msg}");
            return ExitCode::from(2);
        }
    };
    match scenarios::run(&cfg, args.quiet) {
        Ok(summary) if summary.pass => ExitCode::SUCCESS,
        Ok(_) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("rbsde: {e}");
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::SolveBsde(args) => run(args, &[Scenario::Bsde, Scenario::DoubleBarrier]),
        Command::SolvePde(args) => run(args, &[Scenario::Pde]),
        Command::CrossValidate(args) => run(args, &[Scenario::CrossValidate]),
        Command::Penalize(args) => run(args, &[Scenario::Penalized]),
        Command::Game(args) => run(args, &[Scenario::Game]),
        Command::Converge(args) => {
            let axis = match Axis::parse(&args.axis) {
                Ok(axis) => axis,
                Err(msg) => {
                    eprintln!("rbsde: {msg}");
                    return ExitCode::from(2);
                }
            };
            let cfg = match load_config(&args.run, &[]) {
                Ok(cfg) => cfg,
                Err(msg) => {
                    eprintln!("rbsde: {msg}");
                    return ExitCode::from(2);
                }
            };
            match convergence::run_study(&cfg, axis, args.points, args.run.quiet) {
                Ok(summary) if summary.pass => ExitCode::SUCCESS,
                Ok(_) => ExitCode::FAILURE,
                Err(e) => {
                    eprintln!("rbsde: {e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
