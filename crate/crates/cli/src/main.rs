//! `evomem`: train, evaluate and inspect a self-evolving memory store.
//!
//! Exit status is 0 on success, 2 on configuration or input errors and 1 on
//! runtime failures.

mod commands;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "evomem", version, about = "Self-evolving agent memory engine")]
struct Cli {
    /// Log verbosity on stderr.
    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Warn)]
    log_level: LogLevel,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stream training tasks through the engine and write the evolved store.
    Train(TrainArgs),
    /// Frozen evaluation of a store on test tasks.
    Test(TestArgs),
    /// Run the synthetic bandit simulator and emit per-policy traces as CSV.
    Sim(SimArgs),
    /// Average maximum cosine similarity of a test set to a training set.
    Amcs(AmcsArgs),
    /// Print the memories of a store, optionally filtered.
    Inspect(InspectArgs),
    /// Cascade and store-size statistics re-derived from a report.
    Stats(StatsArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Run config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Training tasks; defaults to the config's `data.train_tasks`.
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// Existing store to continue from; a fresh store otherwise.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Where the evolved store is written.
    #[arg(long)]
    out: PathBuf,
    /// Also write the report JSON here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Run id for a fresh store; derived from the seed by default.
    #[arg(long)]
    run_id: Option<String>,
    /// Overrides the config's engine seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Print the full report JSON on stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct TestArgs {
    /// Run config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Test tasks; defaults to the config's `data.test_tasks`.
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// Store to evaluate; it is never modified.
    #[arg(long)]
    store: PathBuf,
    /// Also write the report JSON here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Overrides the config's engine seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Print the full report JSON on stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    ColdStart,
    Decoupling,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Reward {
    Advantage,
    Absolute,
}

#[derive(Args, Debug)]
struct SimArgs {
    /// Scenario JSON (params, config, seeds, steps). Overrides --preset.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Built-in scenario used when --scenario is absent.
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    preset: Preset,
    /// Number of seeds; one environment per seed.
    #[arg(long)]
    seeds: Option<u64>,
    /// First seed of the range.
    #[arg(long)]
    first_seed: Option<u64>,
    /// Stream length per seed.
    #[arg(long)]
    steps: Option<usize>,
    /// Reward fed to the posterior update.
    #[arg(long, value_enum)]
    reward: Option<Reward>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print a JSON summary (per-policy means and sign tests) on stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct AmcsArgs {
    /// Test tasks (JSONL).
    #[arg(long)]
    test: PathBuf,
    /// Training tasks (JSONL).
    #[arg(long)]
    train: PathBuf,
    /// Take the embedder from this run config; the default hashing embedder otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    /// Store to read.
    #[arg(long)]
    store: PathBuf,
    /// global, local or preference.
    #[arg(long)]
    bank: Option<String>,
    /// Keep memories with posterior mean at least this.
    #[arg(long)]
    mu_min: Option<f64>,
    /// Keep memories with posterior mean at most this.
    #[arg(long)]
    mu_max: Option<f64>,
    /// Print a JSON array instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct StatsArgs {
    /// Report JSON written by train or test.
    #[arg(long)]
    report: PathBuf,
    /// Print the statistics as JSON.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.log_level {
        LogLevel::Error => tracing::Level::ERROR,
        LogLevel::Warn => tracing::Level::WARN,
        LogLevel::Info => tracing::Level::INFO,
        LogLevel::Debug => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).with_target(false).init();
    let outcome = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Test(a) => commands::test(a),
        Command::Sim(a) => commands::sim(a),
        Command::Amcs(a) => commands::amcs(a),
        Command::Inspect(a) => commands::inspect(a),
        Command::Stats(a) => commands::stats(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
