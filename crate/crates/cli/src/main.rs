//! Command-line driver for the slant DiD pipeline.
//!
//! Exit codes: 0 success, 1 internal failure, 2 invalid configuration,
//! 3 missing upstream artifact.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use slantdid_core::config::StudyConfig;
use slantdid_core::pipeline::{run_stage, Stage};
use slantdid_core::Error;

const BUNDLED_CONFIG: &str = include_str!("../../../configs/default.toml");

#[derive(Parser)]
#[command(name = "slantdid", version, about = "Embedding slant scoring and DiD estimation for user-day panels")]
struct Cli {
    /// Study config (TOML). Defaults to the bundled configs/default.toml.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seeds.master`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Validate and filter the raw corpus.
    Ingest,
    /// Build poles and score every document.
    Score,
    /// Aggregate scores to user-day cells and derive cohort flags.
    Panel,
    /// DiD battery, weekly interactions and imputation estimates.
    Estimate,
    /// Daily and binned event-study coefficients.
    EventStudy,
    /// Generate a synthetic corpus or panel.
    Synth,
    /// Monte Carlo bias and coverage of the TWFE estimator.
    Mc,
    /// Assemble tables and plot data.
    Report,
}

impl From<Command> for Stage {
    fn from(c: Command) -> Self {
        match c {
            Command::Ingest => Stage::Ingest,
            Command::Score => Stage::Score,
            Command::Panel => Stage::Panel,
            Command::Estimate => Stage::Estimate,
            Command::EventStudy => Stage::EventStudy,
            Command::Synth => Stage::Synth,
            Command::Mc => Stage::Mc,
            Command::Report => Stage::Report,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::MissingArtifact { .. } => 3,
        _ => 1,
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let mut cfg = match &cli.config {
        Some(p) => StudyConfig::load(p)?,
        None => StudyConfig::parse(BUNDLED_CONFIG, "configs/default.toml")?,
    };
    cfg.apply_env(|k| std::env::var(k).ok());
    if let Some(seed) = cli.seed {
        cfg.seeds.master = seed;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let out = run_stage(cli.command.into(), &cfg)?;
    println!("{}: {}", out.stage, out.summary);
    for p in &out.outputs {
        println!("  wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
