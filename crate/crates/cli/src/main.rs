use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wlancast::pipeline::{self, InputKind, PipelineConfig, RunOptions, Stage};
use wlancast::Error;

/// Cluster Wi-Fi access points by load behaviour and forecast their traffic.
#[derive(Debug, Parser)]
#[command(name = "wlancast", version, about)]
struct Cli {
    /// TOML configuration; every key has a default, so this may be omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed for every stochastic stage.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Restrict training, evaluation and planning to one horizon (minutes).
    #[arg(long, global = true, value_parser = clap::builder::PossibleValuesParser::new(["10", "60"]))]
    horizon: Option<String>,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Aggregate the association log (or synthetic input) into per-AP load series.
    Ingest,
    /// Generate the synthetic population configured under [synthetic].
    Synth,
    /// Extract and scale the 35 behavioural features.
    Features,
    /// Fit PCA and project the scaled features.
    Reduce,
    /// Choose k by silhouette and cluster the reduced features.
    Cluster,
    /// Train the global model and the cluster-specific models.
    Train,
    /// Evaluate every model on the test windows of each cluster.
    Evaluate,
    /// Choose a model tier per cluster and summarise deployment cost.
    Plan,
    /// Write plot-ready CSVs and a text summary.
    Report,
    /// Run every stage in order.
    All,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::MissingArtifact { .. } => 3,
        _ => 4,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let opts = RunOptions {
        horizon_minutes: cli.horizon.map(|h| h.parse().expect("restricted by clap")),
    };
    let stage = match cli.command {
        Command::All => {
            println!("{}", pipeline::run_all(&cfg, &opts)?);
            return Ok(());
        }
        Command::Synth => {
            cfg.input.kind = InputKind::Synthetic;
            Stage::Ingest
        }
        Command::Ingest => Stage::Ingest,
        Command::Features => Stage::Features,
        Command::Reduce => Stage::Reduce,
        Command::Cluster => Stage::Cluster,
        Command::Train => Stage::Train,
        Command::Evaluate => Stage::Evaluate,
        Command::Plan => Stage::Plan,
        Command::Report => Stage::Report,
    };
    let outcome = pipeline::run_stage(stage, &cfg, &opts)?;
    match outcome.summary {
        Some(text) => println!("{text}"),
        None => {
            for a in &outcome.artifacts {
                println!("{}", cfg.out_dir.join(a).display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
