use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedquit_cli::commands::{self, Target};
use fedquit_cli::compare::compare;
use fedquit_cli::config::{parse_config, ExperimentConfig, MethodName, Overrides, PenaltyValue};
use fedquit_cli::pipeline::run_pipeline;
use fedquit_cli::{CliError, Result};

/// Federated unlearning simulator.
#[derive(Parser)]
#[command(name = "fedquit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML, or JSON with a .json extension).
    #[arg(long)]
    config: PathBuf,
    /// Run this seed only.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MethodArgs {
    /// fedquit-logits, fedquit-softmax, incompetent or natural.
    #[arg(long)]
    method: Option<MethodName>,
    /// Penalty value: a real number or `min`.
    #[arg(long, allow_hyphen_values = true)]
    v: Option<PenaltyValue>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the original model, or the retrained one with --exclude.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        exclude: Option<usize>,
    },
    /// Apply the unlearning method to a checkpoint.
    Unlearn {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        method: MethodArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        client: Option<usize>,
    },
    /// Resume federated training without the client until the target accuracy is met.
    Recover {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        client: Option<usize>,
        /// Target test accuracy.
        #[arg(
            long,
            conflicts_with = "retrained",
            required_unless_present = "retrained"
        )]
        target: Option<f64>,
        /// Retrained checkpoint whose test accuracy is the target.
        #[arg(long)]
        retrained: Option<PathBuf>,
    },
    /// Compute accuracy and attack metrics for a checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        client: Option<usize>,
        #[arg(long)]
        retrained: Option<PathBuf>,
    },
    /// Full experiment: train, retrain, unlearn, recover and report.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        method: MethodArgs,
    },
    /// Build a comparison table from report files.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn load(common: &Common, method: Option<&MethodArgs>) -> Result<ExperimentConfig> {
    let overrides = Overrides {
        seed: common.seed,
        out_dir: common.out.clone(),
        method: method.and_then(|m| m.method),
        v: method.and_then(|m| m.v.clone()),
    };
    parse_config(&common.config, &overrides)
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("serialisable")
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, exclude } => {
            let cfg = load(&common, None)?;
            print_json(&commands::train(&cfg, exclude)?);
        }
        Command::Unlearn {
            common,
            method,
            model,
            client,
        } => {
            let cfg = load(&common, Some(&method))?;
            let u = commands::single_client(&cfg, client)?;
            print_json(&commands::unlearn(&cfg, &model, u)?);
        }
        Command::Recover {
            common,
            model,
            client,
            target,
            retrained,
        } => {
            let cfg = load(&common, None)?;
            let u = commands::single_client(&cfg, client)?;
            let target = match (target, retrained) {
                (Some(t), _) => Target::Accuracy(t),
                (None, Some(p)) => Target::Retrained(p),
                (None, None) => {
                    return Err(CliError::config("target", "give --target or --retrained"))
                }
            };
            print_json(&commands::recover_from(&cfg, &model, u, &target)?);
        }
        Command::Evaluate {
            common,
            model,
            client,
            retrained,
        } => {
            let cfg = load(&common, None)?;
            let u = commands::single_client(&cfg, client)?;
            print_json(&commands::evaluate(&cfg, &model, u, retrained.as_deref())?);
        }
        Command::Pipeline { common, method } => {
            let cfg = load(&common, Some(&method))?;
            let outcome = run_pipeline(&cfg)?;
            print_json(&outcome.run.summary);
            if !outcome.all_converged() {
                let stuck = outcome.run.reports.iter().filter(|r| !r.converged).count();
                return Err(CliError::NonConvergence(format!(
                    "{stuck} of {} runs; artifacts in {}",
                    outcome.run.reports.len(),
                    outcome.out_dir.display()
                )));
            }
        }
        Command::Compare { reports, out } => {
            let rows = compare(&reports, &out)?;
            print_json(&rows);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Bad arguments count as configuration errors.
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
