use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gridmarket_cli::*;
use gridmarket_core::auction::Mechanism;
use gridmarket_core::par::Execution;

#[derive(Parser)]
#[command(
    name = "gridmarket",
    version,
    about = "P2P microgrid market simulator and MARL trainer"
)]
struct Cli {
    /// Run every batch on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train policies and write a checkpoint plus learning curve.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the configured episode budget.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Evaluate a checkpoint, or a baseline, on held-out days.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, required_unless_present = "baseline")]
        ckpt: Option<PathBuf>,
        /// Evaluate a fixed baseline instead of a checkpoint.
        #[arg(long, value_parser = ["abstain", "random"], conflicts_with = "ckpt")]
        baseline: Option<String>,
        #[arg(long)]
        days: usize,
    },
    /// Compare checkpoints trained under each mechanism.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mrdac: PathBuf,
        #[arg(long)]
        vda: PathBuf,
        #[arg(long)]
        greedy: PathBuf,
        /// Defaults to every held-out day.
        #[arg(long)]
        days: Option<usize>,
    },
    /// Clear a CSV order book (agent_id,side,price,quantity).
    Clear {
        #[arg(long)]
        book: PathBuf,
        #[arg(long, default_value = "mrdac")]
        mechanism: Mechanism,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic load/PV profile library.
    GenProfiles {
        #[arg(long)]
        days: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        agents: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match cli.command {
        Command::Train {
            config,
            resume,
            episodes,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(n) = episodes {
                cfg.train.episodes = n;
            }
            let out = run_train(&cfg, resume.as_deref(), exec)?;
            println!(
                "trained {} episodes; checkpoint {}; curve {}",
                out.episodes,
                out.checkpoint.display(),
                out.curve.display()
            );
        }
        Command::Eval {
            config,
            ckpt,
            baseline,
            days,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let source = match (&ckpt, baseline.as_deref()) {
                (Some(p), _) => EvalSource::Checkpoint(p),
                (None, Some("abstain")) => EvalSource::Abstain,
                _ => EvalSource::Random,
            };
            let report = run_eval(&cfg, source, days, exec)?;
            print!("{}", report.table());
            println!("wrote {}", report.summary_csv.display());
        }
        Command::Compare {
            config,
            mrdac,
            vda,
            greedy,
            days,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let days = days.unwrap_or(cfg.profiles.test_days);
            let report = run_compare(&cfg, [&mrdac, &vda, &greedy], days, exec)?;
            print!("{}", report.table());
            println!("wrote {}", report.csv.display());
        }
        Command::Clear { book, mechanism, seed } => {
            print!("{}", run_clear(&book, mechanism, seed)?);
        }
        Command::GenProfiles {
            days,
            seed,
            out,
            agents,
        } => {
            run_gen_profiles(agents, days, seed, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
