use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kantab::commands::{self, BenchConfig, HorizonSpec};
use kantab::error::{CliError, EXIT_OK};
use kantab_core::control::{DiscountOrigin, EvaluationConfig, StudyConfig, VALUE_TOLERANCE};
use kantab_core::refine::{MeasureMode, RefinementConfig};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "kantab", version, about = "Kantorovich metrics for labeled Markov chains and adaptive abstraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Distance between the word distributions of two chain files.
    Metric(MetricArgs),
    /// Refine a partition of a system until its abstraction is deterministic.
    Refine(RefineArgs),
    /// Synthesize and evaluate a controller on every refinement iteration.
    Control(ControlArgs),
    /// Scaling of the recursion against the exact transport oracle.
    Bench(BenchArgs),
}

#[derive(Args)]
#[group(id = "accuracy", required = true, multiple = false)]
struct Accuracy {
    /// Target accuracy; the horizon is the smallest n with 2^-n <= epsilon.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Args)]
struct MetricArgs {
    file1: PathBuf,
    file2: PathBuf,
    #[command(flatten)]
    accuracy: Accuracy,
    /// Cross-check against exact optimal transport.
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exact,
    Sampled,
}

#[derive(Args)]
struct RefineArgs {
    /// System file; the built-in benchmark when omitted.
    #[arg(long)]
    system: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long, value_enum, default_value_t = Mode::Exact)]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    /// Write the final abstraction as a chain file.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Origin {
    #[value(name = "1")]
    One,
    #[value(name = "0")]
    Zero,
}

#[derive(Args)]
struct ControlArgs {
    /// System file with an actuation block; the built-in benchmark when omitted.
    #[arg(long)]
    system: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    gamma: f64,
    #[arg(long, default_value_t = 5000)]
    trajectories: usize,
    #[arg(long, default_value_t = 1000)]
    length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Exponent of the discount on the first state.
    #[arg(long, value_enum, default_value_t = Origin::One)]
    discount_origin: Origin,
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    /// Sample cloud size for the per-action transition estimates.
    #[arg(long, default_value_t = 1_000_000)]
    mdp_samples: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 12)]
    max_horizon: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![2, 3])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    states: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

fn emit<T: Serialize>(json: bool, value: &T, text: impl FnOnce(&T) -> String) {
    if json {
        println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
    } else {
        print!("{}", text(value));
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Metric(a) => {
            let horizon = match (a.accuracy.epsilon, a.accuracy.horizon) {
                (Some(e), _) => HorizonSpec::Epsilon(e),
                (_, Some(n)) => HorizonSpec::Steps(n),
                _ => unreachable!("clap requires one of the two"),
            };
            let report = commands::metric_files(&a.file1, &a.file2, horizon, a.oracle)?;
            emit(a.json, &report, |r| r.render());
            Ok(EXIT_OK)
        }
        Command::Refine(a) => {
            let sys = commands::load_system(a.system.as_deref())?;
            let config = RefinementConfig {
                max_iterations: a.max_iter,
                epsilon: a.epsilon,
                mode: match a.mode {
                    Mode::Exact => MeasureMode::Exact,
                    Mode::Sampled => MeasureMode::Sampled {
                        samples: a.samples,
                        seed: a.seed,
                    },
                },
            };
            let outcome = commands::refine_system(&sys, &config)?;
            if let Some(path) = &a.output {
                commands::write_file(path, &outcome.chain.to_json())?;
            }
            emit(a.json, &outcome, |o| o.trace.render_table());
            Ok(outcome.exit_code())
        }
        Command::Control(a) => {
            let csys = commands::load_controlled(a.system.as_deref())?;
            let config = StudyConfig {
                refinement: RefinementConfig {
                    epsilon: a.epsilon,
                    ..Default::default()
                },
                evaluation: EvaluationConfig {
                    gamma: a.gamma,
                    trajectories: a.trajectories,
                    length: a.length,
                    seed: a.seed,
                    origin: match a.discount_origin {
                        Origin::One => DiscountOrigin::One,
                        Origin::Zero => DiscountOrigin::Zero,
                    },
                },
                mdp_samples: a.mdp_samples,
                tolerance: VALUE_TOLERANCE,
            };
            let study = commands::control(&csys, &config)?;
            emit(a.json, &study, |s| s.render_table());
            Ok(EXIT_OK)
        }
        Command::Bench(a) => {
            let report = commands::bench(&BenchConfig {
                max_horizon: a.max_horizon,
                sizes: a.sizes,
                states: a.states,
                seed: a.seed,
            })?;
            emit(a.json, &report, |r| r.render());
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("kantab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
