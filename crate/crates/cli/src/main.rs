mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{CommonFlags, FileValues};

/// Train and analyse hyperbolic temporal knowledge-graph embeddings.
#[derive(Debug, Parser)]
#[command(name = "hercules", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: CommonFlags,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model; writes best.herc, last.herc and an epoch log
    Train,
    /// Filtered MRR and Hits@{1,3,10} of a checkpoint
    Eval,
    /// Re-evaluate with every query's timestamp replaced by each timestamp
    ProbeTime,
    /// Train one model per negative count and tabulate test metrics
    SweepNeg {
        /// Negative counts, comma separated
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
    },
    /// Curvature tables of two checkpoints and their absolute difference
    CurvatureDiff {
        /// Second checkpoint, compared against --checkpoint
        #[arg(long)]
        against: Option<PathBuf>,
        /// Report the share of differences below this value
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Number of trainable parameters for the dataset and settings
    CountParams,
    /// Entity coordinates of a 2-D model at the curvature of (relation, timestamp)
    #[command(name = "export-2d")]
    Export2d {
        /// Relation name or id
        #[arg(long)]
        relation: Option<String>,
        /// Timestamp name or id
        #[arg(long)]
        timestamp: Option<String>,
    },
    /// Write a seeded synthetic temporal graph (train/valid/test) to --out
    Synth {
        #[arg(long)]
        entities: Option<usize>,
        #[arg(long)]
        relations: Option<usize>,
        #[arg(long)]
        timestamps: Option<usize>,
        #[arg(long)]
        eras: Option<usize>,
        #[arg(long)]
        facts: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Eval => "eval",
            Command::ProbeTime => "probe-time",
            Command::SweepNeg { .. } => "sweep-neg",
            Command::CurvatureDiff { .. } => "curvature-diff",
            Command::CountParams => "count-params",
            Command::Export2d { .. } => "export-2d",
            Command::Synth { .. } => "synth",
        }
    }
}

/// Configuration problems exit with 2, like clap's own usage errors; failures
/// while running exit with 1.
enum Failure {
    Usage(anyhow::Error),
    Run(anyhow::Error),
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (job, resolved) = (|| {
        let mut file = FileValues::load(cli.flags.config.as_deref())?;
        let mut resolved = config::resolve(cli.command.name(), &cli.flags, &mut file)?;
        let job = commands::prepare(cli.command, &mut resolved, &mut file)?;
        file.finish()?;
        anyhow::Ok((job, resolved))
    })()
    .map_err(Failure::Usage)?;
    commands::echo_config(&resolved).map_err(Failure::Run)?;
    hercules::exec::with_threads(resolved.threads, || commands::execute(job, &resolved))
        .map_err(Failure::Run)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
