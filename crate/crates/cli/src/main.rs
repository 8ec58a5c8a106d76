//! `adload`: collect offline corpora, train agents, score uplift, sweep
//! perturbations, distill trees and check the robust-MDP theory.

mod commands;
mod config;
mod error;
mod manifest;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use adload_core::agents::{Objective, Variant};
use adload_core::env::{EnvKind, PerturbParam};
use adload_core::ScoreMode;
use clap::{Args, Parser, Subcommand};

use crate::error::CliError;
use crate::pipeline::Stage;

#[derive(Debug, Parser)]
#[command(name = "adload", version, about = "Offline robust Q-learning for ad-load experiments")]
struct Cli {
    /// Log filter, e.g. `info` or `adload_core=debug`. Overrides RUST_LOG.
    #[arg(long, global = true)]
    log: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Roll out a behaviour policy and write an offline corpus.
    Collect(CollectArgs),
    /// Train an offline agent on a corpus.
    Train(TrainArgs),
    /// Cost curve and AUCC of an agent or T-learner on a corpus.
    EvalAucc(EvalArgs),
    /// Greedy CartPole returns across a perturbation grid.
    SweepPerturb(SweepArgs),
    /// Fit a regression tree to a teacher's uplift scores.
    Distill(DistillArgs),
    /// Numerical checks of the robust linear MDP results.
    VerifyTheory(TheoryArgs),
    /// Run pipeline stages from a config file.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    #[arg(long, value_parser = parse_from_str::<EnvKind>)]
    pub env: EnvKind,
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    /// Exploration around the CartPole expert; session corpora are uniform.
    #[arg(long, default_value_t = 0.3)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Reuse a trained CartPole expert instead of training one.
    #[arg(long)]
    pub expert: Option<PathBuf>,
    /// Also write a CSV mirror of the corpus.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_from_str::<Variant>)]
    pub variant: Variant,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_parser = parse_from_str::<Objective>)]
    pub objective: Option<Objective>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Target network sync period in steps.
    #[arg(long)]
    pub sync: Option<usize>,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub center_rewards: bool,
    /// Agent section of a TOML config used as the base before flags apply.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Agent scored by its own action gap (combined mode only).
    #[arg(long, conflicts_with_all = ["revenue_agent", "engagement_agent", "tlearner"])]
    pub agent: Option<PathBuf>,
    #[arg(long, requires = "engagement_agent")]
    pub revenue_agent: Option<PathBuf>,
    #[arg(long, requires = "revenue_agent")]
    pub engagement_agent: Option<PathBuf>,
    /// Fit a T-learner on this corpus and score it instead.
    #[arg(long)]
    pub tlearner: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub depth: usize,
    #[arg(long, default_value_t = 50)]
    pub min_leaf: usize,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "combined", value_parser = parse_from_str::<ScoreMode>)]
    pub mode: ScoreMode,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 100)]
    pub buckets: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub agent: PathBuf,
    #[arg(long, value_parser = parse_from_str::<PerturbParam>)]
    pub param: PerturbParam,
    /// Grid values, comma separated; must contain the nominal value.
    #[arg(long, value_delimiter = ',', required = true)]
    pub grid: Vec<f64>,
    #[arg(long, default_value_t = 30)]
    pub episodes: usize,
    /// Environment seeds per grid value.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    /// Scalarized teacher agent.
    #[arg(long, conflicts_with_all = ["revenue_teacher", "engagement_teacher"])]
    pub teacher: Option<PathBuf>,
    #[arg(long, requires = "engagement_teacher")]
    pub revenue_teacher: Option<PathBuf>,
    #[arg(long, requires = "revenue_teacher")]
    pub engagement_teacher: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub depth: usize,
    #[arg(long, default_value_t = 50)]
    pub min_leaf: usize,
    #[arg(long, default_value = "combined", value_parser = parse_from_str::<ScoreMode>)]
    pub mode: ScoreMode,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Held-out corpus; when given, writes teacher/student/T-learner AUCCs.
    #[arg(long, requires = "report")]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Prop1,
    Prop2,
    Fqi,
    Thm1,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    #[arg(long, value_enum)]
    pub suite: Suite,
    /// Instances, pairs, MDPs or seeds, depending on the suite.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    pub stage: Stage,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_from_str<T: std::str::FromStr<Err = adload_core::Error>>(s: &str) -> Result<T, String> {
    s.parse::<T>().map_err(|e| e.to_string())
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Collect(a) => commands::collect(&a),
        Command::Train(a) => commands::train(&a),
        Command::EvalAucc(a) => commands::eval_aucc(&a),
        Command::SweepPerturb(a) => commands::sweep_perturb(&a),
        Command::Distill(a) => commands::distill(&a),
        Command::VerifyTheory(a) => commands::verify_theory(&a),
        Command::Run(a) => pipeline::run(&a.config, a.stage, &a.out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let mut logger = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"));
    if let Some(filter) = &cli.log {
        logger.parse_filters(filter);
    }
    logger.init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
