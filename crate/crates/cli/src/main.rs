//! `lqmfg`: exact solves, critic benchmarks, actor runs and full mean-field
//! experiments driven by a JSON config.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "lqmfg", version, about = "Linear-quadratic mean-field game experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated seeds; overrides the config's `seeds`.
    #[arg(long, global = true)]
    seeds: Option<String>,
    /// Replace the sampled critic with exact policy evaluation.
    #[arg(long, global = true)]
    exact_critic: bool,
    /// Replace the sampled mean-field update with the exact one.
    #[arg(long, global = true)]
    exact_mean: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Exact Nash pair by fixed-point iteration; writes nash.json.
    SolveExact,
    /// Critic accuracy against the exact values; writes critic_bench.csv.
    EvalCritic,
    /// Natural actor-critic at a fixed mean-field state.
    RunActor,
    /// The full mean-field actor-critic loop; writes per-seed traces and summary.json.
    RunMfg,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::SolveExact => "solve-exact",
            Command::EvalCritic => "eval-critic",
            Command::RunActor => "run-actor",
            Command::RunMfg => "run-mfg",
        }
    }
}

pub struct Flags {
    pub exact_critic: bool,
    pub exact_mean: bool,
}

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<lqmfg::Error> for Failure {
    fn from(e: lqmfg::Error) -> Self {
        let code = if e.is_precondition() {
            2
        } else if e.is_divergence() {
            3
        } else {
            1
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let path = cli
        .config
        .ok_or_else(|| Failure::config("--config PATH is required"))?;
    let loaded = config::load(&path, cli.seeds.as_deref())?;
    let out = cli
        .out
        .or_else(|| loaded.config.out.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    output::ensure_dir(&out)?;
    let flags = Flags {
        exact_critic: cli.exact_critic,
        exact_mean: cli.exact_mean,
    };
    let mut effective = loaded.config.clone();
    if flags.exact_critic {
        effective.critic.kind = lqmfg::critic::CriticKind::Exact;
        effective.actor.settings.critic = lqmfg::critic::CriticKind::Exact;
        effective.mfg.actor.critic = lqmfg::critic::CriticKind::Exact;
    }
    if flags.exact_mean {
        effective.mfg.mean_update = lqmfg::mfg::MeanUpdate::Exact;
    }
    let hash = config::config_hash(cli.command.name(), &effective);
    log::info!("{} with config {hash}", cli.command.name());
    match cli.command {
        Command::SolveExact => commands::solve_exact(&loaded, &hash, &out),
        Command::EvalCritic => commands::eval_critic(&loaded, &flags, &hash, &out),
        Command::RunActor => commands::run_actor(&loaded, &flags, &hash, &out),
        Command::RunMfg => commands::run_mfg(&loaded, &flags, &hash, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MFG_LOG_LEVEL", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
