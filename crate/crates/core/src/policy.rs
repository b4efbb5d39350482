//! Role and primitive policies, the role switching schedule, and scripted
//! baselines (Random, Greedy and the role-scripted executor).

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sample_categorical, softmax, Mlp, MlpSpec};
use crate::observation::{observe_team, JointScope, RobotFeatures};
use crate::world::{CellKind, Coord, GridWorld, Heading};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RoleAction {
    Explore = 0,
    Cover = 1,
}

impl RoleAction {
    pub const ALL: [RoleAction; 2] = [RoleAction::Explore, RoleAction::Cover];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrimitiveAction {
    MoveForward = 0,
    TurnRight = 1,
    MoveBackward = 2,
    TurnLeft = 3,
    Stop = 4,
}

impl PrimitiveAction {
    pub const ALL: [PrimitiveAction; 5] = [
        PrimitiveAction::MoveForward,
        PrimitiveAction::TurnRight,
        PrimitiveAction::MoveBackward,
        PrimitiveAction::TurnLeft,
        PrimitiveAction::Stop,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }

    pub fn one_hot(self) -> [f64; 5] {
        let mut v = [0.0; 5];
        v[self.index()] = 1.0;
        v
    }
}

/// Decentralised actors shared by every robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyBundle {
    pub role_actor: Mlp,
    pub primitive_actor: Mlp,
    /// Roles are re-selected every `role_period` steps.
    pub role_period: usize,
}

pub fn role_actor_input(feat: &RobotFeatures) -> Vec<f64> {
    let mut x = Vec::with_capacity(feat.local.len() + feat.joint.len() + feat.aggregated.len());
    x.extend_from_slice(&feat.local);
    x.extend_from_slice(&feat.joint);
    x.extend_from_slice(&feat.aggregated);
    x
}

pub fn primitive_actor_input(local: &[f64], role: RoleAction) -> Vec<f64> {
    let mut x = Vec::with_capacity(local.len() + 1);
    x.extend_from_slice(local);
    x.push(role.index() as f64);
    x
}

impl PolicyBundle {
    /// Fresh actors with hidden layers `hidden` and near-uniform initial outputs.
    pub fn new<R: Rng + ?Sized>(local_dim: usize, joint_dim: usize, hidden: &[usize], role_period: usize, rng: &mut R) -> Result<Self> {
        if role_period == 0 {
            return Err(Error::InvalidConfig("role period must be >= 1".into()));
        }
        let sizes = |input: usize, output: usize| {
            let mut s = vec![input];
            s.extend_from_slice(hidden);
            s.push(output);
            MlpSpec::new(s)
        };
        let role_actor = Mlp::init(sizes(2 * local_dim + joint_dim, 2)?, 0.01, rng);
        let primitive_actor = Mlp::init(sizes(local_dim + 1, 5)?, 0.01, rng);
        Ok(Self { role_actor, primitive_actor, role_period })
    }

    pub fn role_distribution(&self, local: &[f64], joint: &[f64], aggregated: &[f64]) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(local.len() + joint.len() + aggregated.len());
        x.extend_from_slice(local);
        x.extend_from_slice(joint);
        x.extend_from_slice(aggregated);
        Ok(softmax(&self.role_actor.forward(&x)?))
    }

    pub fn primitive_distribution(&self, local: &[f64], role: RoleAction) -> Result<Vec<f64>> {
        Ok(softmax(&self.primitive_actor.forward(&primitive_actor_input(local, role))?))
    }
}

/// Samples fresh roles on selection steps (`step_index % k == 0`), otherwise
/// keeps `prev_roles`.
pub fn select_roles(
    bundle: &PolicyBundle,
    features: &[RobotFeatures],
    step_index: usize,
    rng: &mut ChaCha8Rng,
    prev_roles: &[RoleAction],
) -> Result<Vec<RoleAction>> {
    if step_index % bundle.role_period != 0 && prev_roles.len() == features.len() {
        return Ok(prev_roles.to_vec());
    }
    features
        .iter()
        .map(|f| {
            let probs = bundle.role_distribution(&f.local, &f.joint, &f.aggregated)?;
            Ok(RoleAction::from_index(sample_categorical(&probs, rng)))
        })
        .collect()
}

pub fn random_policy<R: Rng + ?Sized>(rng: &mut R, n_robots: usize) -> Vec<PrimitiveAction> {
    (0..n_robots).map(|_| PrimitiveAction::from_index(rng.gen_range(0..5))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GoalMode {
    FrontierOrTarget,
    FrontierOnly,
    TargetOnly,
}

fn planner_passable(world: &GridWorld, c: Coord) -> bool {
    !world.is_explored(c) || world.kind(c) != CellKind::Obstacle
}

/// Breadth-first distances from `start` over cells that are unexplored or
/// known to be traversable.
pub fn planning_distances(world: &GridWorld, start: Coord) -> Vec<Option<usize>> {
    let mut dist = vec![None; world.width() * world.height()];
    dist[world.index(start)] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(c) = queue.pop_front() {
        let d = dist[world.index(c)].unwrap();
        for (_, n) in world.neighbors4(c) {
            let idx = world.index(n);
            if dist[idx].is_none() && planner_passable(world, n) {
                dist[idx] = Some(d + 1);
                queue.push_back(n);
            }
        }
    }
    dist
}

fn is_goal(world: &GridWorld, c: Coord, mode: GoalMode) -> bool {
    let frontier = || world.is_frontier(c);
    let target = || world.is_explored(c) && world.kind(c) == CellKind::Target && !world.is_covered(c);
    match mode {
        GoalMode::FrontierOrTarget => frontier() || target(),
        GoalMode::FrontierOnly => frontier(),
        GoalMode::TargetOnly => target(),
    }
}

/// Nearest reachable goal cell by planning distance, ties broken row-major.
pub fn greedy_goal(world: &GridWorld, robot_id: usize, mode: GoalMode) -> Option<Coord> {
    greedy_goal_excluding(world, robot_id, mode, &[], 0.0)
}

/// As [`greedy_goal`], skipping goals within Euclidean distance `spread` of
/// any cell in `claimed`.
pub fn greedy_goal_excluding(world: &GridWorld, robot_id: usize, mode: GoalMode, claimed: &[Coord], spread: f64) -> Option<Coord> {
    let start = world.robots()[robot_id].pos;
    let dist = planning_distances(world, start);
    let spread2 = spread * spread;
    dist.iter()
        .enumerate()
        .filter_map(|(idx, d)| {
            let d = (*d)?;
            let c = world.coord(idx);
            let free = claimed.iter().all(|g| (g.dist2(c) as f64) > spread2);
            (d > 0 && free && is_goal(world, c, mode)).then_some((d, idx))
        })
        .min()
        .map(|(_, idx)| world.coord(idx))
}

fn distances_avoiding(world: &GridWorld, goal: Coord, blocked: &[bool]) -> Vec<Option<usize>> {
    let mut dist = vec![None; world.width() * world.height()];
    dist[world.index(goal)] = Some(0);
    let mut queue = VecDeque::from([goal]);
    while let Some(c) = queue.pop_front() {
        let d = dist[world.index(c)].unwrap();
        for (_, n) in world.neighbors4(c) {
            let idx = world.index(n);
            if dist[idx].is_none() && !blocked[idx] && planner_passable(world, n) {
                dist[idx] = Some(d + 1);
                queue.push_back(n);
            }
        }
    }
    dist
}

/// Primitive action that advances `robot_id` one step along a shortest path to
/// `goal`. Cells held by other robots are routed around when an alternative
/// path exists.
pub fn step_toward(world: &GridWorld, robot_id: usize, goal: Coord) -> PrimitiveAction {
    let pose = world.robots()[robot_id];
    let mut blocked = vec![false; world.width() * world.height()];
    for r in world.robots() {
        if r.id != robot_id && r.pos != goal {
            blocked[world.index(r.pos)] = true;
        }
    }
    let mut to_goal = distances_avoiding(world, goal, &blocked);
    if to_goal[world.index(pose.pos)].is_none() {
        blocked.iter_mut().for_each(|b| *b = false);
        to_goal = distances_avoiding(world, goal, &blocked);
    }
    let Some(here) = to_goal[world.index(pose.pos)] else {
        return PrimitiveAction::Stop;
    };
    if here == 0 {
        return PrimitiveAction::Stop;
    }
    // Forward and backward moves take one action; a side step needs a turn first.
    let cost = |h: Heading| {
        if h == pose.heading || h == pose.heading.opposite() {
            0
        } else {
            1
        }
    };
    let best = world
        .neighbors4(pose.pos)
        .filter(|(_, n)| to_goal[world.index(*n)] == Some(here - 1))
        .min_by_key(|(h, n)| (cost(*h), world.index(*n)));
    match best {
        None => PrimitiveAction::Stop,
        Some((h, _)) if h == pose.heading => PrimitiveAction::MoveForward,
        Some((h, _)) if h == pose.heading.opposite() => PrimitiveAction::MoveBackward,
        Some((h, _)) if h == pose.heading.turn_left() => PrimitiveAction::TurnLeft,
        Some(_) => PrimitiveAction::TurnRight,
    }
}

pub fn greedy_policy(world: &GridWorld, robot_id: usize, goal_mode: GoalMode) -> PrimitiveAction {
    match greedy_goal(world, robot_id, goal_mode) {
        Some(goal) => step_toward(world, robot_id, goal),
        None => PrimitiveAction::Stop,
    }
}

/// Explore heads for the nearest frontier, Cover for the nearest known uncovered target.
pub fn scripted_executor(world: &GridWorld, robot_id: usize, role: RoleAction) -> PrimitiveAction {
    let mode = match role {
        RoleAction::Explore => GoalMode::FrontierOnly,
        RoleAction::Cover => GoalMode::TargetOnly,
    };
    greedy_policy(world, robot_id, mode)
}

/// Roles (if the policy has any) and primitive actions for one team step.
#[derive(Debug, Clone, PartialEq)]
pub struct TeamDecision {
    pub roles: Option<Vec<RoleAction>>,
    pub actions: Vec<PrimitiveAction>,
}

/// A controller for a whole team, driven by the episode runner.
pub trait TeamPolicy {
    fn name(&self) -> String;
    /// Called before every episode.
    fn reset(&mut self) {}
    fn decide(&mut self, world: &GridWorld, step: usize, rng: &mut ChaCha8Rng) -> Result<TeamDecision>;
}

#[derive(Debug, Clone, Default)]
pub struct RandomTeam;

impl TeamPolicy for RandomTeam {
    fn name(&self) -> String {
        "random".into()
    }

    fn decide(&mut self, world: &GridWorld, _step: usize, rng: &mut ChaCha8Rng) -> Result<TeamDecision> {
        Ok(TeamDecision { roles: None, actions: random_policy(rng, world.n_robots()) })
    }
}

/// Greedy baseline. Robots pick goals in id order; a goal within `spread`
/// cells of an earlier robot's goal is skipped unless nothing else remains.
/// With `persistent`, a robot keeps its goal until the goal stops being one.
#[derive(Debug, Clone)]
pub struct GreedyTeam {
    pub mode: GoalMode,
    pub spread: Option<f64>,
    pub persistent: bool,
    goals: Vec<Option<Coord>>,
}

impl GreedyTeam {
    pub fn new(mode: GoalMode, spread: Option<f64>, persistent: bool) -> Self {
        Self { mode, spread, persistent, goals: Vec::new() }
    }
}

impl Default for GreedyTeam {
    fn default() -> Self {
        Self::new(GoalMode::FrontierOrTarget, None, false)
    }
}

impl TeamPolicy for GreedyTeam {
    fn name(&self) -> String {
        "greedy".into()
    }

    fn reset(&mut self) {
        self.goals.clear();
    }

    fn decide(&mut self, world: &GridWorld, _step: usize, _rng: &mut ChaCha8Rng) -> Result<TeamDecision> {
        let n = world.n_robots();
        self.goals.resize(n, None);
        let mut claimed = Vec::new();
        let mut actions = Vec::with_capacity(n);
        for i in 0..n {
            let kept = self.goals[i].filter(|g| {
                self.persistent && *g != world.robots()[i].pos && is_goal(world, *g, self.mode)
            });
            let goal = kept.or_else(|| match self.spread {
                None => greedy_goal(world, i, self.mode),
                Some(spread) => greedy_goal_excluding(world, i, self.mode, &claimed, spread)
                    .or_else(|| greedy_goal(world, i, self.mode)),
            });
            self.goals[i] = goal;
            actions.push(match goal {
                Some(g) => {
                    claimed.push(g);
                    step_toward(world, i, g)
                }
                None => PrimitiveAction::Stop,
            });
        }
        Ok(TeamDecision { roles: None, actions })
    }
}

/// Scripted executor under fixed roles. A single role is broadcast to every robot.
#[derive(Debug, Clone)]
pub struct ScriptedTeam {
    pub roles: Vec<RoleAction>,
}

impl TeamPolicy for ScriptedTeam {
    fn name(&self) -> String {
        "scripted".into()
    }

    fn decide(&mut self, world: &GridWorld, _step: usize, _rng: &mut ChaCha8Rng) -> Result<TeamDecision> {
        let n = world.n_robots();
        let roles: Vec<RoleAction> = (0..n).map(|i| self.roles[i.min(self.roles.len() - 1)]).collect();
        let actions = roles.iter().enumerate().map(|(i, r)| scripted_executor(world, i, *r)).collect();
        Ok(TeamDecision { roles: Some(roles), actions })
    }
}

/// Learned hierarchical policy: the role actor picks roles every
/// `role_period` steps and the primitive actor acts on local features + role.
#[derive(Debug, Clone)]
pub struct LearnedTeam {
    pub bundle: PolicyBundle,
    pub scope: JointScope,
    /// Sample actions (true) or take the most probable one.
    pub stochastic: bool,
    roles: Vec<RoleAction>,
}

impl LearnedTeam {
    pub fn new(bundle: PolicyBundle, scope: JointScope, stochastic: bool) -> Self {
        Self { bundle, scope, stochastic, roles: Vec::new() }
    }
}

fn pick(probs: &[f64], stochastic: bool, rng: &mut ChaCha8Rng) -> usize {
    if stochastic {
        sample_categorical(probs, rng)
    } else {
        probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
            .0
    }
}

impl TeamPolicy for LearnedTeam {
    fn name(&self) -> String {
        "learned".into()
    }

    fn reset(&mut self) {
        self.roles.clear();
    }

    fn decide(&mut self, world: &GridWorld, step: usize, rng: &mut ChaCha8Rng) -> Result<TeamDecision> {
        let feats = observe_team(world, self.scope);
        if step % self.bundle.role_period == 0 || self.roles.len() != feats.len() {
            self.roles = feats
                .iter()
                .map(|f| {
                    let probs = self.bundle.role_distribution(&f.local, &f.joint, &f.aggregated)?;
                    Ok(RoleAction::from_index(pick(&probs, self.stochastic, rng)))
                })
                .collect::<Result<_>>()?;
        }
        let actions = feats
            .iter()
            .zip(&self.roles)
            .map(|(f, role)| {
                let probs = self.bundle.primitive_distribution(&f.local, *role)?;
                Ok(PrimitiveAction::from_index(pick(&probs, self.stochastic, rng)))
            })
            .collect::<Result<_>>()?;
        Ok(TeamDecision { roles: Some(self.roles.clone()), actions })
    }
}
