//! Command-line interface: train, sweep, evaluate, diagnose, aggregate.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical abort,
//! 3 missing artifacts.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bagsac::experiment::{
    aggregate_campaign, diagnose_run, evaluate, run_sweep, train_run, PolicyCheckpoint,
    RunConfig, SweepMatrix,
};
use bagsac::Error;

#[derive(Parser)]
#[command(name = "bagsac", about = "Guided SAC under partial observability", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training run from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory; defaults to runs/<label>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a campaign matrix of training runs.
    Sweep {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Parallel worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Re-evaluate a saved policy from a completed run directory.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 5)]
        episodes: u32,
    },
    /// Produce the coefficient-activity / blindness report for a run.
    Diagnose {
        #[arg(long)]
        run: PathBuf,
    },
    /// Aggregate per-seed summaries across a campaign directory.
    Aggregate {
        #[arg(long)]
        campaign: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let mut cfg = RunConfig::from_toml_file(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
                cfg.validate()?;
            }
            let out = out.unwrap_or_else(|| PathBuf::from("runs").join(cfg.run_label()));
            let (summary, artifacts) = train_run(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            eprintln!("run artifacts in {}", artifacts.run_dir.display());
            Ok(())
        }
        Command::Sweep { matrix, out, jobs } => {
            let matrix = SweepMatrix::from_toml_file(&matrix)?;
            let summary = run_sweep(&matrix, &out, jobs)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        Command::Evaluate { run, episodes } => {
            let policy_path = run.join("policy.json");
            if !policy_path.exists() {
                return Err(Error::MissingArtifact(format!(
                    "{} (train the run first)",
                    policy_path.display()
                )));
            }
            let text = std::fs::read_to_string(&policy_path)?;
            let ckpt: PolicyCheckpoint = serde_json::from_str(&text)?;
            // Post-hoc evaluations use a reserved eval stream index so they
            // never replay the training-time evaluation episodes.
            let record = evaluate(
                &ckpt.control,
                ckpt.history_k,
                &ckpt.env,
                &ckpt.level,
                episodes,
                read_seed(&run)?,
                u64::MAX,
                0,
            )?;
            println!("{}", serde_json::to_string_pretty(&record)?);
            Ok(())
        }
        Command::Diagnose { run } => {
            let report = diagnose_run(&run)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Aggregate { campaign } => {
            let summary = aggregate_campaign(&campaign)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
    }
}

fn read_seed(run_dir: &std::path::Path) -> Result<u64, Error> {
    let cfg = RunConfig::from_toml_file(&run_dir.join("config.toml"))?;
    Ok(cfg.seed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Config(_) | Error::InvalidArg(_) => 1,
                Error::Numerical { .. } | Error::NonFinite(_) => 2,
                Error::MissingArtifact(_) => 3,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}
