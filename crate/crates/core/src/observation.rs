//! Per-robot masked local observations, merged joint maps and the fixed
//! pooled feature encodings fed to the networks.

use serde::{Deserialize, Serialize};

use crate::world::{CellKind, Coord, GridWorld, Heading};

/// Side length of the pooled joint summary.
pub const JOINT_POOL: usize = 5;
/// Dimension of [`featurize_joint`] output.
pub const JOINT_FEATURE_DIM: usize = 2 * JOINT_POOL * JOINT_POOL;

/// Four binary channels over a `(2·r_fov+1)²` window centred on the robot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalObservation {
    pub side: usize,
    pub center: Coord,
    pub heading: Heading,
    pub grid_width: usize,
    pub grid_height: usize,
    pub obstacle: Vec<bool>,
    pub frontier: Vec<bool>,
    pub target: Vec<bool>,
    pub neighbor: Vec<bool>,
}

impl LocalObservation {
    pub fn channels(&self) -> [&[bool]; 4] {
        [&self.obstacle, &self.frontier, &self.target, &self.neighbor]
    }

    /// World cell under window position `(wx, wy)`, if in bounds.
    pub fn world_cell(&self, wx: usize, wy: usize) -> Option<Coord> {
        let r = (self.side / 2) as isize;
        let x = self.center.x as isize + wx as isize - r;
        let y = self.center.y as isize + wy as isize - r;
        (x >= 0 && y >= 0 && (x as usize) < self.grid_width && (y as usize) < self.grid_height)
            .then(|| Coord::new(x as usize, y as usize))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointObservation {
    pub width: usize,
    pub height: usize,
    pub explored: Vec<bool>,
    pub covered: Vec<bool>,
}

/// Which robots' knowledge is merged into a joint observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum JointScope {
    /// Team-wide union (centralised training).
    #[default]
    Global,
    /// Union over the robot's current communication component only.
    CommComponent,
}

pub fn local_observation(world: &GridWorld, robot_id: usize) -> LocalObservation {
    local_observation_with_graph(world, robot_id, &world.comm_graph())
}

pub fn local_observation_with_graph(world: &GridWorld, robot_id: usize, graph: &[Vec<usize>]) -> LocalObservation {
    let r = world.r_fov();
    let side = 2 * r + 1;
    let pose = world.robots()[robot_id];
    let mut obs = LocalObservation {
        side,
        center: pose.pos,
        heading: pose.heading,
        grid_width: world.width(),
        grid_height: world.height(),
        obstacle: vec![false; side * side],
        frontier: vec![false; side * side],
        target: vec![false; side * side],
        neighbor: vec![false; side * side],
    };
    for wy in 0..side {
        for wx in 0..side {
            let Some(c) = obs.world_cell(wx, wy) else { continue };
            if !world.is_explored(c) {
                continue;
            }
            let k = wy * side + wx;
            match world.kind(c) {
                CellKind::Obstacle => obs.obstacle[k] = true,
                CellKind::Target if !world.is_covered(c) => obs.target[k] = true,
                _ => {}
            }
            obs.frontier[k] = world.is_frontier(c);
        }
    }
    for &j in &graph[robot_id] {
        let p = world.robots()[j].pos;
        let wx = p.x as isize - pose.pos.x as isize + r as isize;
        let wy = p.y as isize - pose.pos.y as isize + r as isize;
        if (0..side as isize).contains(&wx) && (0..side as isize).contains(&wy) && world.is_explored(p) {
            obs.neighbor[wy as usize * side + wx as usize] = true;
        }
    }
    obs
}

/// Team-wide merged explored and covered maps.
pub fn joint_observation(world: &GridWorld) -> JointObservation {
    JointObservation {
        width: world.width(),
        height: world.height(),
        explored: world.explored_mask().to_vec(),
        covered: world.covered_mask().to_vec(),
    }
}

/// Connected components of an adjacency list; `component[i]` is the smallest
/// robot id in `i`'s component.
pub fn components(graph: &[Vec<usize>]) -> Vec<usize> {
    let n = graph.len();
    let mut comp = vec![usize::MAX; n];
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        comp[start] = start;
        while let Some(i) = stack.pop() {
            for &j in &graph[i] {
                if comp[j] == usize::MAX {
                    comp[j] = start;
                    stack.push(j);
                }
            }
        }
    }
    comp
}

/// Joint observation restricted by `scope`.
pub fn joint_observation_scoped(
    world: &GridWorld,
    robot_id: usize,
    graph: &[Vec<usize>],
    scope: JointScope,
) -> JointObservation {
    match scope {
        JointScope::Global => joint_observation(world),
        JointScope::CommComponent => {
            let comp = components(graph);
            let members: Vec<usize> = (0..world.n_robots()).filter(|&j| comp[j] == comp[robot_id]).collect();
            let n = world.width() * world.height();
            let mut explored = vec![false; n];
            for &j in &members {
                for (e, s) in explored.iter_mut().zip(world.seen_by(j)) {
                    *e |= *s;
                }
            }
            let covered = (0..n)
                .map(|i| world.covered_by(world.coord(i)).is_some_and(|by| comp[by] == comp[robot_id]))
                .collect();
            JointObservation { width: world.width(), height: world.height(), explored, covered }
        }
    }
}

/// Length of [`featurize_local`] output for a given sensing radius.
pub fn local_feature_dim(r_fov: usize) -> usize {
    let pooled = r_fov + 1; // ceil((2r+1)/2)
    4 * pooled * pooled + 2 + 4
}

/// 2×2 average pooling of every channel, then normalised position and a
/// heading one-hot.
pub fn featurize_local(obs: &LocalObservation) -> Vec<f64> {
    let side = obs.side;
    let pooled = side.div_ceil(2);
    let mut out = Vec::with_capacity(4 * pooled * pooled + 6);
    for channel in obs.channels() {
        for by in 0..pooled {
            for bx in 0..pooled {
                let (mut ones, mut cells) = (0usize, 0usize);
                for y in 2 * by..(2 * by + 2).min(side) {
                    for x in 2 * bx..(2 * bx + 2).min(side) {
                        cells += 1;
                        ones += channel[y * side + x] as usize;
                    }
                }
                out.push(ones as f64 / cells as f64);
            }
        }
    }
    out.push(obs.center.x as f64 / obs.grid_width as f64);
    out.push(obs.center.y as f64 / obs.grid_height as f64);
    let mut heading = [0.0; 4];
    heading[obs.heading.index()] = 1.0;
    out.extend(heading);
    out
}

fn pool_grid(grid: &[bool], width: usize, height: usize) -> Vec<f64> {
    let mut ones = [0usize; JOINT_POOL * JOINT_POOL];
    let mut cells = [0usize; JOINT_POOL * JOINT_POOL];
    for y in 0..height {
        let by = y * JOINT_POOL / height;
        for x in 0..width {
            let b = by * JOINT_POOL + x * JOINT_POOL / width;
            cells[b] += 1;
            ones[b] += grid[y * width + x] as usize;
        }
    }
    ones.iter()
        .zip(&cells)
        .map(|(&o, &c)| if c == 0 { 0.0 } else { o as f64 / c as f64 })
        .collect()
}

/// Each merged map average-pooled into a fixed 5×5 summary.
pub fn featurize_joint(jobs: &JointObservation) -> Vec<f64> {
    let mut out = pool_grid(&jobs.explored, jobs.width, jobs.height);
    out.extend(pool_grid(&jobs.covered, jobs.width, jobs.height));
    out
}

/// `0.5·(own + mean of neighbours)`, or the robot's own features when isolated.
pub fn aggregate_neighbors(features: &[Vec<f64>], graph: &[Vec<usize>]) -> Vec<Vec<f64>> {
    features
        .iter()
        .zip(graph)
        .map(|(own, nbrs)| {
            if nbrs.is_empty() {
                return own.clone();
            }
            let inv = 1.0 / nbrs.len() as f64;
            own.iter()
                .enumerate()
                .map(|(k, v)| {
                    let mean: f64 = nbrs.iter().map(|&j| features[j][k]).sum::<f64>() * inv;
                    0.5 * (v + mean)
                })
                .collect()
        })
        .collect()
}

/// Network inputs of one robot at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotFeatures {
    pub local: Vec<f64>,
    pub joint: Vec<f64>,
    pub aggregated: Vec<f64>,
}

/// Features for every robot in `world`.
pub fn observe_team(world: &GridWorld, scope: JointScope) -> Vec<RobotFeatures> {
    let graph = world.comm_graph();
    let local: Vec<Vec<f64>> = (0..world.n_robots())
        .map(|i| featurize_local(&local_observation_with_graph(world, i, &graph)))
        .collect();
    let aggregated = aggregate_neighbors(&local, &graph);
    let global_joint = (scope == JointScope::Global).then(|| featurize_joint(&joint_observation(world)));
    local
        .into_iter()
        .zip(aggregated)
        .enumerate()
        .map(|(i, (local, aggregated))| {
            let joint = match &global_joint {
                Some(j) => j.clone(),
                None => featurize_joint(&joint_observation_scoped(world, i, &graph, scope)),
            };
            RobotFeatures { local, joint, aggregated }
        })
        .collect()
}
