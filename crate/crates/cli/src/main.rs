use std::path::PathBuf;
use std::process::ExitCode;

use calibra_cli::commands::{cmd_evaluate, cmd_sweep, cmd_train, EvalSplit, EvaluateOptions};
use calibra_cli::CliError;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "calibra", version, about = "Calibration-aware training of Bayesian and frequentist classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `out_dir` of the config
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its log, report, reliability table and checkpoint
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the lambda x seed grid and write sweep.csv
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Use this single seed instead of the config's seed list
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "CALIBRA_THREADS")]
        threads: Option<usize>,
    },
    /// Re-score a posterior checkpoint on the configured dataset
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Confidence bins
        #[arg(long)]
        bins: Option<usize>,
        /// Ensemble members
        #[arg(long)]
        eval_samples: Option<usize>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { common, seed } => {
            let s = cmd_train(&common.config, common.out.as_deref(), seed)?;
            println!("accuracy {:.6}", s.accuracy);
            println!("ece {:.6}", s.ece);
            println!("outputs in {}", s.out_dir.display());
        }
        Command::Sweep { common, seed, threads } => {
            let rows = cmd_sweep(&common.config, common.out.as_deref(), seed, threads)?;
            println!("{} cells completed", rows.len());
        }
        Command::Evaluate { common, checkpoint, bins, eval_samples, split } => {
            let eval = cmd_evaluate(&EvaluateOptions {
                config: common.config,
                checkpoint,
                out: common.out,
                bins,
                eval_samples,
                split: match split {
                    SplitArg::Train => EvalSplit::Train,
                    SplitArg::Test => EvalSplit::Test,
                },
            })?;
            println!("accuracy {:.6}", eval.report.accuracy);
            println!("ece {:.6}", eval.report.ece);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
