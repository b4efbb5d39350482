//! Run configuration and its sectioned `key = value` text format.
//!
//! ```text
//! [run]
//! seed = 7
//! policy = random,greedy
//! [scenario]
//! preset = hard
//! n_robots = 8
//! [reward]
//! alpha = 0.4
//! beta = 0.6
//! ```
//!
//! Lines starting with `#` or `;` are comments. Scenario keys override the
//! chosen presets (or the default scenario when no preset is given).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use areasearch_core::world::SpawnMode;
use areasearch_core::{AbilityMode, JointScope, RewardWeights, RoleAction, ScenarioConfig, ScenarioPreset, TrainConfig};

use crate::CliError;

/// Where a team's actions come from.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySource {
    Random,
    Greedy,
    /// Scripted executor with every robot holding one role.
    Scripted(RoleAction),
    /// Learned actors loaded from a checkpoint (given by `checkpoint`).
    Learned,
}

impl PolicySource {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySource::Random => "random",
            PolicySource::Greedy => "greedy",
            PolicySource::Scripted(RoleAction::Explore) => "scripted_explore",
            PolicySource::Scripted(RoleAction::Cover) => "scripted_cover",
            PolicySource::Learned => "learned",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        Ok(match s {
            "random" => PolicySource::Random,
            "greedy" => PolicySource::Greedy,
            "scripted" | "scripted_explore" => PolicySource::Scripted(RoleAction::Explore),
            "scripted_cover" => PolicySource::Scripted(RoleAction::Cover),
            "learned" => PolicySource::Learned,
            other => return Err(CliError::Config(format!("unknown policy '{other}'"))),
        })
    }
}

/// Optional overrides of [`ScenarioConfig`] fields.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioOverrides {
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub n_obstacles: Option<usize>,
    pub n_targets: Option<usize>,
    pub n_robots: Option<usize>,
    pub r_fov: Option<usize>,
    pub r_comm: Option<f64>,
    pub rad_e: Option<f64>,
    pub episode_len: Option<usize>,
    pub spawn: Option<SpawnMode>,
}

impl ScenarioOverrides {
    pub fn apply(&self, mut s: ScenarioConfig) -> ScenarioConfig {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { s.$f = v; })* };
        }
        set!(width, height, n_obstacles, n_targets, n_robots, r_fov, r_comm, rad_e, episode_len, spawn);
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub presets: Vec<ScenarioPreset>,
    pub scenario: ScenarioOverrides,
    pub train: TrainConfig,
    pub weights: RewardWeights,
    pub policies: Vec<PolicySource>,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    pub episodes: usize,
    /// Sample learned actions instead of taking the most probable one.
    pub stochastic: bool,
    pub eval_scope: JointScope,
    pub render: bool,
    /// Pixels per cell in rendered frames.
    pub frame_scale: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            presets: Vec::new(),
            scenario: ScenarioOverrides::default(),
            train: TrainConfig::default(),
            weights: RewardWeights::default(),
            policies: vec![PolicySource::Greedy],
            checkpoint: None,
            out: PathBuf::from("out"),
            episodes: 500,
            stochastic: true,
            eval_scope: JointScope::Global,
            render: false,
            frame_scale: 4,
        }
    }
}

/// A named scenario ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedScenario {
    pub name: String,
    pub config: ScenarioConfig,
}

impl RunConfig {
    /// Presets with overrides applied, or one "custom" scenario.
    pub fn scenarios(&self) -> Vec<NamedScenario> {
        if self.presets.is_empty() {
            let config = ScenarioConfig { seed: self.seed, ..self.scenario.apply(ScenarioConfig::default()) };
            return vec![NamedScenario { name: "custom".into(), config }];
        }
        self.presets
            .iter()
            .map(|p| {
                let n = self.scenario.n_robots.unwrap_or(ScenarioConfig::default().n_robots);
                let config = ScenarioConfig { seed: self.seed, ..self.scenario.apply(p.config(n)) };
                NamedScenario { name: p.name().into(), config }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        for s in self.scenarios() {
            s.config.validate().map_err(CliError::from)?;
        }
        self.train.validate().map_err(CliError::from)?;
        RewardWeights::new(self.weights.alpha, self.weights.beta).map_err(CliError::from)?;
        if self.policies.is_empty() {
            return Err(CliError::Config("at least one policy is required".into()));
        }
        if self.episodes == 0 {
            return Err(CliError::Config("episodes must be positive".into()));
        }
        if self.frame_scale == 0 {
            return Err(CliError::Config("frame_scale must be positive".into()));
        }
        Ok(())
    }

    /// Checks that a learned policy has an existing checkpoint.
    pub fn require_checkpoint(&self) -> Result<Option<&Path>, CliError> {
        if !self.policies.contains(&PolicySource::Learned) {
            return Ok(None);
        }
        match &self.checkpoint {
            None => Err(CliError::Config("policy 'learned' needs a checkpoint".into())),
            Some(p) if !p.exists() => Err(CliError::Config(format!("checkpoint {} does not exist", p.display()))),
            Some(p) => Ok(Some(p)),
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut alpha = None;
        let mut beta = None;
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                if !["run", "scenario", "train", "reward"].contains(&section.as_str()) {
                    return Err(CliError::Config(format!("line {}: unknown section [{section}]", lineno + 1)));
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let err = |m: String| CliError::Config(format!("line {}: {key}: {m}", lineno + 1));
            match (section.as_str(), key) {
                ("run", "seed") => cfg.seed = num(value).map_err(err)?,
                ("run", "policy") => {
                    cfg.policies = list(value).iter().map(|p| PolicySource::parse(p)).collect::<Result<_, _>>()?
                }
                ("run", "checkpoint") => cfg.checkpoint = Some(PathBuf::from(value)),
                ("run", "out") => cfg.out = PathBuf::from(value),
                ("run", "episodes") => cfg.episodes = num(value).map_err(err)?,
                ("run", "stochastic") => cfg.stochastic = boolean(value).map_err(err)?,
                ("run", "eval_scope") => cfg.eval_scope = scope(value).map_err(err)?,
                ("run", "render") => cfg.render = boolean(value).map_err(err)?,
                ("run", "frame_scale") => cfg.frame_scale = num(value).map_err(err)?,
                ("scenario", "preset") => {
                    cfg.presets = list(value).iter().map(|p| p.parse()).collect::<Result<_, _>>()?;
                }
                ("scenario", "width") => cfg.scenario.width = Some(num(value).map_err(err)?),
                ("scenario", "height") => cfg.scenario.height = Some(num(value).map_err(err)?),
                ("scenario", "n_obstacles") => cfg.scenario.n_obstacles = Some(num(value).map_err(err)?),
                ("scenario", "n_targets") => cfg.scenario.n_targets = Some(num(value).map_err(err)?),
                ("scenario", "n_robots") => cfg.scenario.n_robots = Some(num(value).map_err(err)?),
                ("scenario", "r_fov") => cfg.scenario.r_fov = Some(num(value).map_err(err)?),
                ("scenario", "r_comm") => cfg.scenario.r_comm = Some(num(value).map_err(err)?),
                ("scenario", "rad_e") => cfg.scenario.rad_e = Some(num(value).map_err(err)?),
                ("scenario", "episode_len") => cfg.scenario.episode_len = Some(num(value).map_err(err)?),
                ("scenario", "spawn") => cfg.scenario.spawn = Some(spawn(value).map_err(err)?),
                ("train", "learning_rate") => cfg.train.learning_rate = num(value).map_err(err)?,
                ("train", "clip_eps") => cfg.train.clip_eps = num(value).map_err(err)?,
                ("train", "gamma") => cfg.train.gamma = num(value).map_err(err)?,
                ("train", "gae_lambda") => cfg.train.gae_lambda = num(value).map_err(err)?,
                ("train", "role_kl") => cfg.train.role_coef.kl = num(value).map_err(err)?,
                ("train", "role_value") => cfg.train.role_coef.value = num(value).map_err(err)?,
                ("train", "role_entropy") => cfg.train.role_coef.entropy = num(value).map_err(err)?,
                ("train", "primitive_kl") => cfg.train.primitive_coef.kl = num(value).map_err(err)?,
                ("train", "primitive_value") => cfg.train.primitive_coef.value = num(value).map_err(err)?,
                ("train", "primitive_entropy") => cfg.train.primitive_coef.entropy = num(value).map_err(err)?,
                ("train", "batch_size") => cfg.train.batch_size = num(value).map_err(err)?,
                ("train", "minibatch_size") => cfg.train.minibatch_size = num(value).map_err(err)?,
                ("train", "epochs") => cfg.train.epochs = num(value).map_err(err)?,
                ("train", "total_timesteps") => cfg.train.total_timesteps = num(value).map_err(err)?,
                ("train", "hidden") => {
                    cfg.train.hidden = list(value).iter().map(|v| num(v)).collect::<Result<_, _>>().map_err(err)?
                }
                ("train", "role_period") => cfg.train.role_period = num(value).map_err(err)?,
                ("train", "ability_mode") => {
                    cfg.train.ability_mode = match value {
                        "as_printed" => AbilityMode::AsPrinted,
                        "geometric" => AbilityMode::Geometric,
                        v => return Err(err(format!("unknown mode '{v}'"))),
                    }
                }
                ("train", "joint_scope") => cfg.train.joint_scope = scope(value).map_err(err)?,
                ("train", "max_grad_norm") => {
                    cfg.train.max_grad_norm = if value == "none" { None } else { Some(num(value).map_err(err)?) }
                }
                ("reward", "alpha") => alpha = Some(num(value).map_err(err)?),
                ("reward", "beta") => beta = Some(num(value).map_err(err)?),
                ("", _) => return Err(err("key outside a section".into())),
                _ => return Err(err("unknown key".into())),
            }
        }
        if alpha.is_some() || beta.is_some() {
            let a = alpha.unwrap_or_else(|| 1.0 - beta.unwrap());
            let b = beta.unwrap_or(1.0 - a);
            cfg.weights = RewardWeights::new(a, b).map_err(CliError::from)?;
        }
        Ok(cfg)
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let join = |v: Vec<String>| v.join(",");
        s.push_str("[run]\n");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "policy = {}", join(self.policies.iter().map(|p| p.name().to_string()).collect()));
        if let Some(c) = &self.checkpoint {
            let _ = writeln!(s, "checkpoint = {}", c.display());
        }
        let _ = writeln!(s, "out = {}", self.out.display());
        let _ = writeln!(s, "episodes = {}", self.episodes);
        let _ = writeln!(s, "stochastic = {}", self.stochastic);
        let _ = writeln!(s, "eval_scope = {}", scope_name(self.eval_scope));
        let _ = writeln!(s, "render = {}", self.render);
        let _ = writeln!(s, "frame_scale = {}", self.frame_scale);
        s.push_str("\n[scenario]\n");
        if !self.presets.is_empty() {
            let _ = writeln!(s, "preset = {}", join(self.presets.iter().map(|p| p.name().to_string()).collect()));
        }
        let o = &self.scenario;
        macro_rules! opt {
            ($($f:ident),*) => { $(if let Some(v) = o.$f { let _ = writeln!(s, "{} = {}", stringify!($f), v); })* };
        }
        opt!(width, height, n_obstacles, n_targets, n_robots, r_fov, r_comm, rad_e, episode_len);
        if let Some(sp) = o.spawn {
            let _ = writeln!(s, "spawn = {}", spawn_name(sp));
        }
        let t = &self.train;
        s.push_str("\n[train]\n");
        let _ = writeln!(s, "learning_rate = {}", t.learning_rate);
        let _ = writeln!(s, "clip_eps = {}", t.clip_eps);
        let _ = writeln!(s, "gamma = {}", t.gamma);
        let _ = writeln!(s, "gae_lambda = {}", t.gae_lambda);
        let _ = writeln!(s, "role_kl = {}", t.role_coef.kl);
        let _ = writeln!(s, "role_value = {}", t.role_coef.value);
        let _ = writeln!(s, "role_entropy = {}", t.role_coef.entropy);
        let _ = writeln!(s, "primitive_kl = {}", t.primitive_coef.kl);
        let _ = writeln!(s, "primitive_value = {}", t.primitive_coef.value);
        let _ = writeln!(s, "primitive_entropy = {}", t.primitive_coef.entropy);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "minibatch_size = {}", t.minibatch_size);
        let _ = writeln!(s, "epochs = {}", t.epochs);
        let _ = writeln!(s, "total_timesteps = {}", t.total_timesteps);
        let _ = writeln!(s, "hidden = {}", join(t.hidden.iter().map(|h| h.to_string()).collect()));
        let _ = writeln!(s, "role_period = {}", t.role_period);
        let mode = match t.ability_mode {
            AbilityMode::AsPrinted => "as_printed",
            AbilityMode::Geometric => "geometric",
        };
        let _ = writeln!(s, "ability_mode = {mode}");
        let _ = writeln!(s, "joint_scope = {}", scope_name(t.joint_scope));
        match t.max_grad_norm {
            Some(v) => {
                let _ = writeln!(s, "max_grad_norm = {v}");
            }
            None => s.push_str("max_grad_norm = none\n"),
        }
        s.push_str("\n[reward]\n");
        let _ = writeln!(s, "alpha = {}", self.weights.alpha);
        let _ = writeln!(s, "beta = {}", self.weights.beta);
        s
    }
}

fn list(value: &str) -> Vec<String> {
    value.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect()
}

fn num<T: std::str::FromStr>(value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| format!("'{value}': {e}"))
}

fn boolean(value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        v => Err(format!("'{v}' is not a boolean")),
    }
}

fn scope(value: &str) -> Result<JointScope, String> {
    match value {
        "global" => Ok(JointScope::Global),
        "comm" => Ok(JointScope::CommComponent),
        v => Err(format!("unknown scope '{v}'")),
    }
}

fn scope_name(s: JointScope) -> &'static str {
    match s {
        JointScope::Global => "global",
        JointScope::CommComponent => "comm",
    }
}

fn spawn(value: &str) -> Result<SpawnMode, String> {
    match value {
        "clustered" => Ok(SpawnMode::Clustered),
        "scattered" => Ok(SpawnMode::Scattered),
        v => Err(format!("unknown spawn mode '{v}'")),
    }
}

fn spawn_name(s: SpawnMode) -> &'static str {
    match s {
        SpawnMode::Clustered => "clustered",
        SpawnMode::Scattered => "scattered",
    }
}
