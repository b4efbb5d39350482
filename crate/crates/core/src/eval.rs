//! Scenario presets, the episode runner and the evaluation metrics.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{PrimitiveAction, RoleAction, TeamDecision, TeamPolicy};
use crate::rng::{derive_seed, stream_rng, streams};
use crate::world::{generate_map, GridWorld, RobotPose, ScenarioConfig, StepEvents};

/// Named scenario suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioPreset {
    Easy,
    Medium,
    Hard,
    SuperHard,
    ObsEasy,
    ObsMedium,
    ObsHard,
    /// 10×10 map for quick training runs.
    Desk,
}

impl ScenarioPreset {
    pub const ALL: [ScenarioPreset; 8] = [
        ScenarioPreset::Easy,
        ScenarioPreset::Medium,
        ScenarioPreset::Hard,
        ScenarioPreset::SuperHard,
        ScenarioPreset::ObsEasy,
        ScenarioPreset::ObsMedium,
        ScenarioPreset::ObsHard,
        ScenarioPreset::Desk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioPreset::Easy => "easy",
            ScenarioPreset::Medium => "medium",
            ScenarioPreset::Hard => "hard",
            ScenarioPreset::SuperHard => "super_hard",
            ScenarioPreset::ObsEasy => "obs_easy",
            ScenarioPreset::ObsMedium => "obs_medium",
            ScenarioPreset::ObsHard => "obs_hard",
            ScenarioPreset::Desk => "desk",
        }
    }

    /// `(width, height, obstacles, target fraction of free cells)`
    fn layout(self) -> (usize, usize, usize, f64) {
        match self {
            ScenarioPreset::Easy => (25, 25, 250, 0.56),
            ScenarioPreset::Medium => (25, 25, 250, 0.24),
            ScenarioPreset::Hard => (25, 25, 250, 0.16),
            ScenarioPreset::SuperHard => (25, 25, 250, 0.08),
            ScenarioPreset::ObsEasy => (25, 25, 100, 0.16),
            ScenarioPreset::ObsMedium => (25, 25, 250, 0.16),
            ScenarioPreset::ObsHard => (25, 25, 325, 0.16),
            ScenarioPreset::Desk => (10, 10, 20, 0.20),
        }
    }

    pub fn target_fraction(self) -> f64 {
        self.layout().3
    }

    /// Scenario with `n_robots` robots and the preset's default sensing and horizon.
    pub fn config(self, n_robots: usize) -> ScenarioConfig {
        let (width, height, n_obstacles, frac) = self.layout();
        let free = width * height - n_obstacles;
        let n_targets = (frac * free as f64).round() as usize;
        let base = ScenarioConfig { width, height, n_obstacles, n_targets, n_robots, ..ScenarioConfig::default() };
        match self {
            ScenarioPreset::Desk => ScenarioConfig { r_fov: DESK_R_FOV, rad_e: DESK_R_FOV as f64, episode_len: DESK_EPISODE_LEN, ..base },
            _ => base,
        }
    }
}

pub const DESK_R_FOV: usize = 2;
pub const DESK_EPISODE_LEN: usize = 40;

impl fmt::Display for ScenarioPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown preset '{s}'")))
    }
}

/// Step-by-step record of one episode. Index 0 of the per-state vectors is the
/// state after initial sensing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub n_free: usize,
    pub n_targets: usize,
    pub explored: Vec<usize>,
    pub covered: Vec<usize>,
    pub positions: Vec<Vec<RobotPose>>,
    /// Per step; `None` for policies without roles.
    pub roles: Vec<Option<Vec<RoleAction>>>,
    pub actions: Vec<Vec<PrimitiveAction>>,
}

impl EpisodeLog {
    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    pub fn explored_fraction(&self, step: usize) -> f64 {
        let i = step.min(self.explored.len() - 1);
        if self.n_free == 0 {
            1.0
        } else {
            self.explored[i] as f64 / self.n_free as f64
        }
    }

    pub fn final_exploration(&self) -> f64 {
        self.explored_fraction(self.explored.len() - 1)
    }

    pub fn final_coverage(&self) -> f64 {
        if self.n_targets == 0 {
            1.0
        } else {
            *self.covered.last().unwrap() as f64 / self.n_targets as f64
        }
    }

    /// First step at which at least 90% of free cells are explored.
    pub fn first_step_at_90(&self) -> Option<usize> {
        (0..self.explored.len()).find(|&s| self.explored_fraction(s) >= 0.9)
    }
}

/// Observer hook of [`run_world`]: called once after initial sensing (with no
/// decision) and then after every step.
pub trait EpisodeObserver {
    fn observe(&mut self, world: &GridWorld, decision: Option<&TeamDecision>, events: &StepEvents) -> Result<()>;
}

impl EpisodeObserver for () {
    fn observe(&mut self, _: &GridWorld, _: Option<&TeamDecision>, _: &StepEvents) -> Result<()> {
        Ok(())
    }
}

/// Runs `policy` on `world` for up to `max_steps` steps, stopping early once
/// every free cell is explored and every target is covered.
pub fn run_world(
    mut world: GridWorld,
    max_steps: usize,
    policy: &mut dyn TeamPolicy,
    seed: u64,
    observer: &mut dyn EpisodeObserver,
) -> Result<EpisodeLog> {
    let mut rng = stream_rng(seed, streams::EPISODE_POLICY, 0);
    policy.reset();
    let initial = world.initial_sense();
    observer.observe(&world, None, &initial)?;
    let mut log = EpisodeLog {
        n_free: world.n_free(),
        n_targets: world.n_targets(),
        explored: vec![world.explored_free()],
        covered: vec![world.covered_count()],
        positions: vec![world.robots().to_vec()],
        roles: Vec::new(),
        actions: Vec::new(),
    };
    for step in 0..max_steps {
        if world.is_complete() {
            break;
        }
        let decision = policy.decide(&world, step, &mut rng)?;
        let events = world.step(&decision.actions)?;
        observer.observe(&world, Some(&decision), &events)?;
        log.explored.push(world.explored_free());
        log.covered.push(world.covered_count());
        log.positions.push(world.robots().to_vec());
        log.roles.push(decision.roles);
        log.actions.push(decision.actions);
    }
    Ok(log)
}

/// Map of episode `seed` for `scenario`.
pub fn episode_world(scenario: &ScenarioConfig, seed: u64) -> Result<GridWorld> {
    let cfg = ScenarioConfig { seed: derive_seed(seed, streams::EPISODE_MAP, 0), ..scenario.clone() };
    generate_map(&cfg)
}

/// Generates the episode's map from `seed` and runs it for `scenario.episode_len` steps.
pub fn run_episode(scenario: &ScenarioConfig, policy: &mut dyn TeamPolicy, seed: u64) -> Result<EpisodeLog> {
    run_world(episode_world(scenario, seed)?, scenario.episode_len, policy, seed, &mut ())
}

/// Seed of evaluation episode `index`. Policies compared with the same base
/// seed see the same maps.
pub fn eval_episode_seed(base_seed: u64, index: u64) -> u64 {
    derive_seed(base_seed, streams::EVAL_EPISODE, index)
}

/// Runs `episodes` independent episodes in parallel, each with a fresh policy
/// from `make_policy`. Results are in episode order.
pub fn evaluate<F>(scenario: &ScenarioConfig, make_policy: F, episodes: usize, base_seed: u64) -> Result<Vec<EpisodeLog>>
where
    F: Fn() -> Box<dyn TeamPolicy + Send> + Sync,
{
    (0..episodes as u64)
        .into_par_iter()
        .map(|i| {
            let mut policy = make_policy();
            run_episode(scenario, policy.as_mut(), eval_episode_seed(base_seed, i))
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Mean final explored share of free cells, in percent.
pub fn exploration_percentage(logs: &[EpisodeLog]) -> f64 {
    100.0 * mean(logs.iter().map(EpisodeLog::final_exploration))
}

/// Mean final covered share of targets, in percent.
pub fn coverage_percentage(logs: &[EpisodeLog]) -> f64 {
    100.0 * mean(logs.iter().map(EpisodeLog::final_coverage))
}

/// Mean first step reaching 90% exploration; `None` if any episode never does.
pub fn time_to_90(logs: &[EpisodeLog]) -> Option<f64> {
    if logs.is_empty() {
        return None;
    }
    let steps: Option<Vec<usize>> = logs.iter().map(EpisodeLog::first_step_at_90).collect();
    steps.map(|s| mean(s.into_iter().map(|v| v as f64)))
}

/// Percentages of (robot, step) role outputs that are Explore and Cover, or
/// `None` when the policy has no roles.
pub fn role_proportions(logs: &[EpisodeLog]) -> Option<(f64, f64)> {
    let (mut explore, mut total) = (0usize, 0usize);
    for roles in logs.iter().flat_map(|l| l.roles.iter()).flatten() {
        explore += roles.iter().filter(|r| **r == RoleAction::Explore).count();
        total += roles.len();
    }
    if total == 0 {
        return None;
    }
    let e = 100.0 * explore as f64 / total as f64;
    Some((e, 100.0 - e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub preset: String,
    pub n_robots: usize,
    pub policy: String,
    pub episodes: usize,
    pub explo_pct: f64,
    pub cover_pct: f64,
    pub time_e: Option<f64>,
    pub role_explore_fraction: Option<f64>,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "preset,n_robots,policy,episodes,explo_pct,cover_pct,time_e,role_explore_fraction";

    pub fn from_logs(preset: &str, n_robots: usize, policy: &str, logs: &[EpisodeLog]) -> Self {
        Self {
            preset: preset.to_string(),
            n_robots,
            policy: policy.to_string(),
            episodes: logs.len(),
            explo_pct: exploration_percentage(logs),
            cover_pct: coverage_percentage(logs),
            time_e: time_to_90(logs),
            role_explore_fraction: role_proportions(logs).map(|p| p.0),
        }
    }

    pub fn to_csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        format!(
            "{},{},{},{},{:.4},{:.4},{},{}",
            self.preset,
            self.n_robots,
            self.policy,
            self.episodes,
            self.explo_pct,
            self.cover_pct,
            opt(self.time_e),
            opt(self.role_explore_fraction)
        )
    }
}

pub fn metrics_csv(reports: &[MetricsReport]) -> String {
    let mut s = String::from(MetricsReport::CSV_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&r.to_csv_row());
        s.push('\n');
    }
    s
}
