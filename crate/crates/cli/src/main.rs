use std::path::PathBuf;
use std::process::ExitCode;

use areasearch_cli::config::{PolicySource, RunConfig};
use areasearch_cli::{cmd_eval, cmd_gen_map, cmd_replay, cmd_train, CliError};
use areasearch_core::RewardWeights;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "areasearch", version, about = "Multi-robot area search: maps, training, evaluation and replays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a map and write it in text form.
    GenMap(Common),
    /// Train the hierarchical policy.
    Train(Common),
    /// Evaluate policies and write a metrics CSV.
    Eval(Common),
    /// Export one episode as a JSONL replay (and PPM frames with --render).
    Replay(Common),
}

#[derive(Args)]
struct Common {
    /// Config file with [run], [scenario], [train] and [reward] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Preset name(s), comma separated.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    robots: Option<usize>,
    #[arg(long)]
    obstacles: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Environment steps to train for.
    #[arg(long)]
    timesteps: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// random, greedy, scripted_explore, scripted_cover or learned (comma separated).
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write PPM frames next to the replay.
    #[arg(long)]
    render: bool,
}

fn build_config(a: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(p) = &a.preset {
        cfg.presets = p.split(',').map(|n| n.trim().parse()).collect::<Result<_, _>>()?;
    }
    if let Some(n) = a.robots {
        cfg.scenario.n_robots = Some(n);
    }
    if let Some(n) = a.obstacles {
        cfg.scenario.n_obstacles = Some(n);
    }
    if let Some(n) = a.episodes {
        cfg.episodes = n;
    }
    if let Some(n) = a.timesteps {
        cfg.train.total_timesteps = n;
    }
    if a.alpha.is_some() || a.beta.is_some() {
        let alpha = a.alpha.unwrap_or_else(|| 1.0 - a.beta.unwrap());
        let beta = a.beta.unwrap_or(1.0 - alpha);
        cfg.weights = RewardWeights::new(alpha, beta)?;
    }
    if let Some(p) = &a.policy {
        cfg.policies = p.split(',').map(|n| PolicySource::parse(n.trim())).collect::<Result<_, _>>()?;
    }
    if let Some(c) = &a.checkpoint {
        cfg.checkpoint = Some(c.clone());
    }
    if let Some(o) = &a.out {
        cfg.out = o.clone();
    }
    cfg.render |= a.render;
    Ok(cfg)
}

fn init_threads() {
    if let Some(n) = std::env::var("AREASEARCH_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads();
    let result = match &cli.command {
        Command::GenMap(a) => build_config(a).and_then(|c| cmd_gen_map(&c).map(|_| ())),
        Command::Train(a) => build_config(a).and_then(|c| cmd_train(&c).map(|_| ())),
        Command::Eval(a) => build_config(a).and_then(|c| cmd_eval(&c).map(|_| ())),
        Command::Replay(a) => build_config(a).and_then(|c| cmd_replay(&c).map(|_| ())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
