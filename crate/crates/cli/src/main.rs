//! `fanout`: rollouts, rewards, advantages, evaluation and dataset filtering
//! from the command line. Errors go to stderr as one JSON object.

mod commands;
mod error;
mod evaluate;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fanout_core::config::BackendKind;

use error::CliError;

#[derive(Parser)]
#[command(
    name = "fanout",
    version,
    about = "Lead-agent/subagent rollouts and training signals"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Run config, TOML or JSON.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset JSON.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Corpus JSONL for the local tools; overrides the config.
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendArg>,
    /// Rollouts per query.
    #[arg(long, global = true)]
    pub group_size: Option<u32>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum BackendArg {
    Remote,
    Scripted,
}

impl From<BackendArg> for BackendKind {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Remote => BackendKind::Remote,
            BackendArg::Scripted => BackendKind::Scripted,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build and save the search index for a corpus.
    Index,
    /// Run G rollouts per dataset question and write trajectory JSONL.
    Rollout {
        /// Also score each rollout and append its training samples here.
        #[arg(long)]
        collect: Option<PathBuf>,
        /// Record wall-clock start and finish times (breaks byte reproducibility).
        #[arg(long)]
        timestamps: bool,
    },
    /// Score trajectory JSONL against the dataset.
    Reward {
        #[arg(long)]
        trajectories: PathBuf,
    },
    /// Group advantages, token weights and surrogate terms for a trajectory file.
    Advantage {
        #[arg(long)]
        trajectories: PathBuf,
        /// Re-score every token with the backend even when new logprobs are present.
        #[arg(long)]
        rescore: bool,
    },
    /// Score predictions JSONL ({"id", "answer_text"}) against the dataset.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Keep consistent answer pairs from a generation log; writes a dataset.
    Filter {
        #[arg(long)]
        log: PathBuf,
        /// Pipeline report; stderr when absent.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn run(cli: Cli, hash: &mut Option<String>) -> Result<(), CliError> {
    let setup = setup::Setup::load(&cli.global)?;
    *hash = Some(setup.hash.clone());
    let g = &cli.global;
    match cli.command {
        Command::Index => commands::index(&setup, g),
        Command::Rollout {
            collect,
            timestamps,
        } => commands::rollout(&setup, g, collect.as_deref(), timestamps),
        Command::Reward { trajectories } => commands::reward(&setup, g, &trajectories),
        Command::Advantage {
            trajectories,
            rescore,
        } => commands::advantage(&setup, g, &trajectories, rescore),
        Command::Evaluate { predictions } => commands::evaluate(&setup, g, &predictions),
        Command::Filter { log, report } => commands::filter(&setup, g, &log, report.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or_default()
                .trim_start_matches("error: ");
            eprintln!("{}", CliError::new("usage", first).report(None));
            return ExitCode::from(2);
        }
    };
    let mut hash = None;
    match run(cli, &mut hash) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.report(hash.as_deref()));
            ExitCode::FAILURE
        }
    }
}
