//! `hybridrag`: simulation harness, dataset preparation, cloud service and
//! client engine.

use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

mod run;
mod settings;

#[derive(Parser)]
#[command(name = "hybridrag", version, about = "Hybrid client/cloud retrieval-augmented text completion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Discrete-event simulation of the client/cloud protocol.
    #[command(subcommand)]
    Sim(SimCommand),
    /// Dataset preparation.
    #[command(subcommand)]
    Data(DataCommand),
    /// Run the cloud memory service.
    Serve(ServeArgs),
    /// Run the client engine behind a WebSocket.
    Engine(EngineArgs),
}

#[derive(Subcommand)]
enum SimCommand {
    /// Replay a trace and write summary metrics as CSV.
    Run(SimRunArgs),
    /// Sweep the edit-distance threshold over a prompt set.
    Sweep(SimSweepArgs),
}

#[derive(Subcommand)]
enum DataCommand {
    /// Build (prompt, memory, reference) triplets from a corpus.
    Prepare(PrepareArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Async,
    Sync,
    Both,
}

#[derive(clap::Args)]
struct SimRunArgs {
    /// JSON Lines trace of typing events.
    #[arg(long)]
    trace: PathBuf,
    /// Simulation settings (TOML or JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Corpus overriding the configured one.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    mode: ModeArg,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the full per-run metrics as JSON.
    #[arg(long)]
    metrics_json: Option<PathBuf>,
}

#[derive(clap::Args)]
struct SimSweepArgs {
    /// Comma-separated threshold values.
    #[arg(long, value_delimiter = ',', required = true)]
    tau: Vec<usize>,
    /// JSON Lines of `{"prompt": ...}`.
    #[arg(long)]
    prompts: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Milliseconds between typed words.
    #[arg(long, default_value_t = 250.0)]
    interval_ms: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args)]
struct PrepareArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ServeArgs {
    /// Service settings (TOML or JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EngineArgs {
    #[arg(long, default_value = "127.0.0.1:8090")]
    listen: SocketAddr,
    /// Base URL of a running cloud service.
    #[arg(long, conflicts_with = "corpus")]
    cloud: Option<String>,
    /// Serve memory in-process from this corpus instead of a cloud service.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Simulation-style settings file; its engine, client and cloud backends apply.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Sim(SimCommand::Run(a)) => run::sim_run(a),
        Command::Sim(SimCommand::Sweep(a)) => run::sim_sweep(a),
        Command::Data(DataCommand::Prepare(a)) => run::data_prepare(a),
        Command::Serve(a) => run::serve(a),
        Command::Engine(a) => run::engine(a),
    }
}
