//! Command implementations behind the `areasearch` binary.

pub mod config;
pub mod replay;
pub mod render;

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use areasearch_core::eval::{episode_world, eval_episode_seed, run_world};
use areasearch_core::{
    evaluate, generate_map, metrics_csv, Checkpoint, Error, GreedyTeam, LearnedTeam, MetricsReport, PolicyBundle,
    RandomTeam, ScriptedTeam, TeamPolicy, TrainLogRow, Trainer,
};

use config::{NamedScenario, PolicySource, RunConfig};
use render::DirSink;
use replay::{ReplayHeader, ReplayRecorder};

/// Failure of a command, grouped by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit code 2.
    Config(String),
    /// Exit code 3.
    Infeasible(String),
    /// Exit code 4.
    Numeric(String),
    /// Exit code 1.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Infeasible(m) => write!(f, "infeasible scenario: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InfeasibleScenario(_) => CliError::Infeasible(e.to_string()),
            Error::NonFiniteGradient | Error::NonFiniteLoss(_) => CliError::Numeric(e.to_string()),
            Error::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

/// Writes the map of the first scenario to `out/map.txt`.
pub fn cmd_gen_map(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    cfg.validate()?;
    let scenario = &cfg.scenarios()[0];
    let world = generate_map(&scenario.config)?;
    let path = cfg.out.join("map.txt");
    write_file(&path, &world.to_map_text()?)?;
    println!(
        "{}: {}x{}, {} obstacles, {} targets, {} robots -> {}",
        scenario.name,
        world.width(),
        world.height(),
        world.width() * world.height() - world.n_free(),
        world.n_targets(),
        world.n_robots(),
        path.display()
    );
    Ok(path)
}

/// Outputs of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub rows: Vec<TrainLogRow>,
}

/// Trains on the first scenario. Resumes from `checkpoint` when it exists and
/// writes the checkpoint after every update.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutputs, CliError> {
    cfg.validate()?;
    let scenario = cfg.scenarios().remove(0);
    let mut trainer = Trainer::new(scenario.config, cfg.train.clone(), cfg.weights, cfg.seed)?;
    let ckpt_path = cfg.checkpoint.clone().unwrap_or_else(|| cfg.out.join("checkpoint.bin"));
    let log_path = cfg.out.join("train_log.csv");
    fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    let resumed = ckpt_path.exists();
    if resumed {
        Checkpoint::load(&ckpt_path)?.restore_into(&mut trainer)?;
    }
    if let Some(parent) = ckpt_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(resumed)
        .write(true)
        .truncate(!resumed)
        .open(&log_path)
        .map_err(io_err(&log_path))?;
    if !resumed || log.metadata().map(|m| m.len() == 0).unwrap_or(true) {
        writeln!(log, "{}", TrainLogRow::HEADER).map_err(io_err(&log_path))?;
    }
    let mut rows = Vec::new();
    while !trainer.is_finished() {
        let row = match trainer.train_iteration() {
            Ok(r) => r,
            Err(e @ (Error::NonFiniteLoss(_) | Error::NonFiniteGradient)) => {
                let dump = cfg.out.join("diagnostic.txt");
                let last = rows.last().map(TrainLogRow::to_csv).unwrap_or_default();
                let text = format!(
                    "error: {e}\nupdate_index: {}\nenv_steps: {}\nlast_row: {last}\n",
                    trainer.update_index, trainer.env_steps
                );
                write_file(&dump, &text)?;
                return Err(CliError::Numeric(format!("{e} (details in {})", dump.display())));
            }
            Err(e) => return Err(e.into()),
        };
        writeln!(log, "{}", row.to_csv()).map_err(io_err(&log_path))?;
        Checkpoint::from_trainer(&trainer).save(&ckpt_path)?;
        println!(
            "update {} steps {} L_r {:.5} L_p {:.5} explore% {:.1}",
            row.update_index, row.steps, row.loss_role, row.loss_primitive, row.role_explore_fraction
        );
        rows.push(row);
    }
    Checkpoint::from_trainer(&trainer).save(&ckpt_path)?;
    Ok(TrainOutputs { checkpoint: ckpt_path, log: log_path, rows })
}

fn load_bundle(cfg: &RunConfig) -> Result<Option<PolicyBundle>, CliError> {
    match cfg.require_checkpoint()? {
        Some(path) => Ok(Some(Checkpoint::load(path)?.agent.bundle)),
        None => Ok(None),
    }
}

/// Builds a fresh team policy.
pub fn make_policy(source: &PolicySource, bundle: Option<&PolicyBundle>, cfg: &RunConfig) -> Box<dyn TeamPolicy + Send> {
    match source {
        PolicySource::Random => Box::new(RandomTeam),
        PolicySource::Greedy => Box::new(GreedyTeam::default()),
        PolicySource::Scripted(role) => Box::new(ScriptedTeam { roles: vec![*role] }),
        PolicySource::Learned => Box::new(LearnedTeam::new(
            bundle.expect("learned policy requires a loaded checkpoint").clone(),
            cfg.eval_scope,
            cfg.stochastic,
        )),
    }
}

fn check_learned_shape(bundle: Option<&PolicyBundle>, scenario: &NamedScenario) -> Result<(), CliError> {
    if let Some(b) = bundle {
        let expected = areasearch_core::observation::local_feature_dim(scenario.config.r_fov) + 1;
        if b.primitive_actor.spec().input_dim() != expected {
            return Err(CliError::Config(format!(
                "checkpoint was trained for a different r_fov than scenario '{}'",
                scenario.name
            )));
        }
    }
    Ok(())
}

/// Evaluates every (scenario, policy) pair and writes `out/metrics.csv`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<Vec<MetricsReport>, CliError> {
    cfg.validate()?;
    let bundle = load_bundle(cfg)?;
    let mut reports = Vec::new();
    for scenario in cfg.scenarios() {
        check_learned_shape(bundle.as_ref(), &scenario)?;
        for source in &cfg.policies {
            let logs = evaluate(&scenario.config, || make_policy(source, bundle.as_ref(), cfg), cfg.episodes, cfg.seed)?;
            reports.push(MetricsReport::from_logs(&scenario.name, scenario.config.n_robots, source.name(), &logs));
        }
    }
    let csv = metrics_csv(&reports);
    write_file(&cfg.out.join("metrics.csv"), &csv)?;
    println!("{:<12} {:>6} {:<17} {:>8} {:>8} {:>8} {:>8}", "preset", "robots", "policy", "explo%", "cover%", "time_e", "explore%");
    for r in &reports {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.1}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<12} {:>6} {:<17} {:>8.1} {:>8.1} {:>8} {:>8}",
            r.preset,
            r.n_robots,
            r.policy,
            r.explo_pct,
            r.cover_pct,
            opt(r.time_e),
            opt(r.role_explore_fraction)
        );
    }
    Ok(reports)
}

/// Outputs of a replay export.
#[derive(Debug, Clone)]
pub struct ReplayOutputs {
    pub replay: PathBuf,
    pub frames: usize,
    pub steps: usize,
}

/// Runs evaluation episode 0 of the first scenario with the first policy and
/// writes `out/replay.jsonl` (and `out/frames/` with `render`).
pub fn cmd_replay(cfg: &RunConfig) -> Result<ReplayOutputs, CliError> {
    cfg.validate()?;
    let bundle = load_bundle(cfg)?;
    let scenario = cfg.scenarios().remove(0);
    check_learned_shape(bundle.as_ref(), &scenario)?;
    let source = &cfg.policies[0];
    let seed = eval_episode_seed(cfg.seed, 0);
    let world = episode_world(&scenario.config, seed)?;
    let header = ReplayHeader {
        kind: "header".into(),
        width: world.width(),
        height: world.height(),
        n_robots: world.n_robots(),
        seed: cfg.seed,
        policy: source.name().into(),
        map: world.to_map_text()?,
    };
    let mut sink = DirSink { dir: cfg.out.join("frames"), written: 0 };
    if cfg.render {
        fs::create_dir_all(&sink.dir).map_err(io_err(&sink.dir))?;
    }
    let mut policy = make_policy(source, bundle.as_ref(), cfg);
    let (text, log) = {
        let frames: Option<&mut dyn render::FrameSink> = if cfg.render { Some(&mut sink) } else { None };
        let mut recorder = ReplayRecorder::new(&header, frames, cfg.frame_scale);
        let log = run_world(world, scenario.config.episode_len, policy.as_mut(), seed, &mut recorder)?;
        (recorder.into_text(), log)
    };
    let path = cfg.out.join("replay.jsonl");
    write_file(&path, &text)?;
    println!("{} steps -> {} ({} frames)", log.steps(), path.display(), sink.written);
    Ok(ReplayOutputs { replay: path, frames: sink.written, steps: log.steps() })
}
