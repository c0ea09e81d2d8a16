use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gpo_core::envs::EnvConfig;
use gpo_core::trainer::{evaluate_learner, read_params, EvalMode};
use gpo_core::verify::{run_suite, Faults, SuiteOptions, CHECK_NAMES, SLOW_CHECKS};
use gpo_cli::{run_experiment, ExperimentConfig, RunFailure};

#[derive(Parser)]
#[command(name = "gpo", version, about = "Co-train a privileged guider and a partially observing learner")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every (algorithm, seed) pair of an experiment file.
    Run {
        config: PathBuf,
        /// Train the seeds of each algorithm on parallel threads.
        #[arg(long)]
        parallel: bool,
    },
    /// Run the numerical checks and print a pass/fail table.
    Verify {
        /// Random tabular instances for the equivalence check.
        #[arg(long, default_value_t = 50)]
        instances: usize,
        /// Random seeds per loss for the gradient check.
        #[arg(long, default_value_t = 100)]
        grad_seeds: usize,
        /// Skip a check by name; may be repeated.
        #[arg(long, value_name = "CHECK")]
        skip: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        inject_fault: Option<Fault>,
    },
    /// Evaluate the learner of a saved parameter file.
    Eval {
        params: PathBuf,
        /// Environment, e.g. `tigerdoor`, `noisy_masked_nav:0.2`, `repeat_previous:2`.
        env: String,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        #[arg(long, value_enum, default_value_t = Mode::Greedy)]
        mode: Mode,
        /// Observation stacking window the network was trained with.
        #[arg(long, default_value_t = 1)]
        stack: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Fault {
    GaeSign,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Greedy,
    Stochastic,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match cli.command {
        Command::Run { config, parallel } => run(&config, parallel),
        Command::Verify { instances, grad_seeds, skip, seed, inject_fault } => verify(instances, grad_seeds, skip, seed, inject_fault),
        Command::Eval { params, env, episodes, mode, stack, seed } => match eval(&params, &env, episodes, mode, stack, seed) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::FAILURE
            }
        },
    }
}

fn run(path: &PathBuf, parallel: bool) -> ExitCode {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: reading {}: {e}", path.display());
            return ExitCode::from(2);
        }
    };
    let exp = match ExperimentConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return ExitCode::from(2);
        }
    };
    match run_experiment(&exp, parallel) {
        Ok(report) => {
            for (algo, finals) in &report.finals {
                let (mean, std) = gpo_cli::output::mean_std(finals);
                println!("{algo:<14} {mean:>10.4} +- {std:.4}  ({} seeds)", finals.len());
            }
            println!("wrote {}", report.dir.display());
            ExitCode::SUCCESS
        }
        Err(RunFailure::Training { error, diagnostics }) => {
            eprintln!("training aborted: {error}\ndiagnostics: {}", diagnostics.display());
            ExitCode::from(3)
        }
        Err(RunFailure::Io(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn verify(instances: usize, grad_seeds: usize, skip: Vec<String>, seed: u64, fault: Option<Fault>) -> ExitCode {
    let known: Vec<&str> = CHECK_NAMES.iter().chain(SLOW_CHECKS.iter()).copied().collect();
    if let Some(bad) = skip.iter().find(|s| !known.contains(&s.as_str())) {
        eprintln!("error: unknown check `{bad}`; known checks: {}", known.join(", "));
        return ExitCode::from(2);
    }
    let opts = SuiteOptions {
        instances,
        grad_seeds,
        skip,
        faults: Faults { gae_sign: matches!(fault, Some(Fault::GaeSign)) },
        seed,
    };
    let outcomes = run_suite(&opts);
    println!("{:<28} {:<6} {:>8}  detail", "check", "result", "seconds");
    for c in &outcomes {
        println!("{:<28} {:<6} {:>8.2}  {}", c.name, if c.passed { "pass" } else { "FAIL" }, c.seconds, c.detail);
    }
    let failed: Vec<&str> = outcomes.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("failing checks: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}

fn eval(path: &PathBuf, env: &str, episodes: usize, mode: Mode, stack: usize, seed: u64) -> anyhow::Result<()> {
    use anyhow::Context;
    let env = EnvConfig::parse_short(env)?;
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let (net, params) = read_params(std::io::BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
    let mode = match mode {
        Mode::Greedy => EvalMode::Greedy,
        Mode::Stochastic => EvalMode::Stochastic,
    };
    anyhow::ensure!(episodes > 0, "--episodes must be positive");
    let (mean, std) = evaluate_learner(&net, &params, &env, stack, episodes, mode, seed)?;
    println!("episodes {episodes}  mean {mean:.6}  std {std:.6}");
    Ok(())
}
