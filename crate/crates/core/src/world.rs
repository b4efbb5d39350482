//! Ground-truth gridworld: map generation, robot kinematics, disc sensing,
//! coverage events, frontier bookkeeping and the communication graph.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PrimitiveAction;

/// Obstacle placement restarts allowed before a scenario is declared infeasible.
pub const MAX_GENERATION_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    Free,
    Obstacle,
    Target,
}

impl CellKind {
    pub fn is_traversable(self) -> bool {
        self != CellKind::Obstacle
    }
}

/// Grid coordinate. `y` grows southwards (row 0 is the top line of a map file).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coord {
    pub x: usize,
    pub y: usize,
}

impl Coord {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    pub fn dist2(self, other: Coord) -> usize {
        let dx = self.x.abs_diff(other.x);
        let dy = self.y.abs_diff(other.y);
        dx * dx + dy * dy
    }

    pub fn manhattan(self, other: Coord) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn turn_right(self) -> Heading {
        Heading::ALL[(self.index() + 1) % 4]
    }

    pub fn turn_left(self) -> Heading {
        Heading::ALL[(self.index() + 3) % 4]
    }

    pub fn opposite(self) -> Heading {
        Heading::ALL[(self.index() + 2) % 4]
    }

    /// Unit displacement `(dx, dy)`.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Heading::North => (0, -1),
            Heading::East => (1, 0),
            Heading::South => (0, 1),
            Heading::West => (-1, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotPose {
    pub id: usize,
    pub pos: Coord,
    pub heading: Heading,
}

/// Everything needed to generate and run one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub width: usize,
    pub height: usize,
    pub n_obstacles: usize,
    pub n_targets: usize,
    pub n_robots: usize,
    pub r_fov: usize,
    pub r_comm: f64,
    pub rad_e: f64,
    pub episode_len: usize,
    pub seed: u64,
    #[serde(default)]
    pub spawn: SpawnMode,
}

/// How robot start cells are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SpawnMode {
    /// The team starts together on the non-target cells nearest (by BFS) to
    /// one random free cell.
    #[default]
    Clustered,
    /// Each robot starts on an independent random non-target cell.
    Scattered,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            width: 25,
            height: 25,
            n_obstacles: 250,
            n_targets: 100,
            n_robots: 4,
            r_fov: 4,
            r_comm: 10.0,
            rad_e: 4.0,
            episode_len: 128,
            seed: 0,
            spawn: SpawnMode::Clustered,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let cells = self.width * self.height;
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("grid must be non-empty".into()));
        }
        if self.n_robots == 0 {
            return Err(Error::InvalidConfig("at least one robot is required".into()));
        }
        if self.n_obstacles + self.n_targets + self.n_robots > cells {
            return Err(Error::InvalidConfig(format!(
                "{} obstacles + {} targets + {} robots exceed {} cells",
                self.n_obstacles, self.n_targets, self.n_robots, cells
            )));
        }
        if self.r_fov < 1 {
            return Err(Error::InvalidConfig("r_fov must be >= 1".into()));
        }
        if !(self.r_comm >= 0.0) {
            return Err(Error::InvalidConfig("r_comm must be >= 0".into()));
        }
        if !(self.rad_e > 0.0) {
            return Err(Error::InvalidConfig("rad_e must be > 0".into()));
        }
        if self.episode_len < 1 {
            return Err(Error::InvalidConfig("episode length must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-robot outcome of one simulator step.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepEvents {
    pub newly_explored: Vec<usize>,
    pub targets_covered: Vec<usize>,
    pub collisions: Vec<bool>,
    /// Cells explored this step, row-major.
    pub explored_cells: Vec<Coord>,
    /// Target cells covered this step.
    pub covered_cells: Vec<Coord>,
}

impl StepEvents {
    fn new(n: usize) -> Self {
        Self {
            newly_explored: vec![0; n],
            targets_covered: vec![0; n],
            collisions: vec![false; n],
            explored_cells: Vec::new(),
            covered_cells: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    width: usize,
    height: usize,
    kind: Vec<CellKind>,
    explored: Vec<bool>,
    covered: Vec<bool>,
    frontier: Vec<bool>,
    /// Per-robot history of sensed cells.
    seen_by: Vec<Vec<bool>>,
    covered_by: Vec<Option<usize>>,
    robots: Vec<RobotPose>,
    step_count: usize,
    r_fov: usize,
    r_comm: f64,
    disc: Vec<(isize, isize)>,
    n_free: usize,
    n_targets: usize,
    explored_free: usize,
    covered_count: usize,
}

fn disc_offsets(r: usize) -> Vec<(isize, isize)> {
    let r = r as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

impl GridWorld {
    /// Builds a world from explicit cell kinds and robot poses. Knowledge masks start empty.
    pub fn new(
        width: usize,
        height: usize,
        kind: Vec<CellKind>,
        robots: Vec<RobotPose>,
        r_fov: usize,
        r_comm: f64,
    ) -> Result<Self> {
        if kind.len() != width * height {
            return Err(Error::ShapeMismatch { expected: width * height, got: kind.len() });
        }
        if r_fov < 1 {
            return Err(Error::InvalidConfig("r_fov must be >= 1".into()));
        }
        for (i, r) in robots.iter().enumerate() {
            if r.id != i {
                return Err(Error::InvalidConfig(format!("robot {i} carries id {}", r.id)));
            }
            if r.pos.x >= width || r.pos.y >= height {
                return Err(Error::InvalidConfig(format!("robot {i} out of bounds")));
            }
            if kind[r.pos.y * width + r.pos.x] == CellKind::Obstacle {
                return Err(Error::InvalidConfig(format!("robot {i} placed on an obstacle")));
            }
            if robots[..i].iter().any(|o| o.pos == r.pos) {
                return Err(Error::InvalidConfig(format!("robot {i} shares a cell")));
            }
        }
        let n = width * height;
        let n_free = kind.iter().filter(|k| k.is_traversable()).count();
        let n_targets = kind.iter().filter(|k| **k == CellKind::Target).count();
        Ok(Self {
            width,
            height,
            kind,
            explored: vec![false; n],
            covered: vec![false; n],
            frontier: vec![false; n],
            seen_by: vec![vec![false; n]; robots.len()],
            covered_by: vec![None; n],
            robots,
            step_count: 0,
            r_fov,
            r_comm,
            disc: disc_offsets(r_fov),
            n_free,
            n_targets,
            explored_free: 0,
            covered_count: 0,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn r_fov(&self) -> usize {
        self.r_fov
    }
    pub fn r_comm(&self) -> f64 {
        self.r_comm
    }
    pub fn robots(&self) -> &[RobotPose] {
        &self.robots
    }
    pub fn n_robots(&self) -> usize {
        self.robots.len()
    }
    pub fn step_count(&self) -> usize {
        self.step_count
    }
    /// Number of non-obstacle cells.
    pub fn n_free(&self) -> usize {
        self.n_free
    }
    pub fn n_targets(&self) -> usize {
        self.n_targets
    }
    /// Explored non-obstacle cells.
    pub fn explored_free(&self) -> usize {
        self.explored_free
    }
    pub fn covered_count(&self) -> usize {
        self.covered_count
    }
    pub fn explored_mask(&self) -> &[bool] {
        &self.explored
    }
    pub fn covered_mask(&self) -> &[bool] {
        &self.covered
    }
    pub fn kinds(&self) -> &[CellKind] {
        &self.kind
    }
    pub fn seen_by(&self, robot: usize) -> &[bool] {
        &self.seen_by[robot]
    }
    pub fn covered_by(&self, c: Coord) -> Option<usize> {
        self.covered_by[self.index(c)]
    }

    #[inline]
    pub fn index(&self, c: Coord) -> usize {
        c.y * self.width + c.x
    }

    #[inline]
    pub fn coord(&self, idx: usize) -> Coord {
        Coord::new(idx % self.width, idx / self.width)
    }

    pub fn in_bounds(&self, x: isize, y: isize) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn offset(&self, c: Coord, dx: isize, dy: isize) -> Option<Coord> {
        let x = c.x as isize + dx;
        let y = c.y as isize + dy;
        self.in_bounds(x, y).then(|| Coord::new(x as usize, y as usize))
    }

    pub fn kind(&self, c: Coord) -> CellKind {
        self.kind[self.index(c)]
    }
    pub fn is_explored(&self, c: Coord) -> bool {
        self.explored[self.index(c)]
    }
    pub fn is_covered(&self, c: Coord) -> bool {
        self.covered[self.index(c)]
    }
    pub fn is_frontier(&self, c: Coord) -> bool {
        self.frontier[self.index(c)]
    }

    /// 4-neighbours of `c` inside the grid, in N, E, S, W order.
    pub fn neighbors4(&self, c: Coord) -> impl Iterator<Item = (Heading, Coord)> + '_ {
        Heading::ALL.into_iter().filter_map(move |h| {
            let (dx, dy) = h.delta();
            self.offset(c, dx, dy).map(|n| (h, n))
        })
    }

    /// All free cells explored and all targets covered.
    pub fn is_complete(&self) -> bool {
        self.explored_free == self.n_free && self.covered_count == self.n_targets
    }

    /// Unexplored in-bounds cells within the robot's sensing disc, row-major.
    pub fn sense(&self, robot_id: usize) -> Vec<Coord> {
        let pos = self.robots[robot_id].pos;
        self.disc
            .iter()
            .filter_map(|&(dx, dy)| self.offset(pos, dx, dy))
            .filter(|c| !self.is_explored(*c))
            .collect()
    }

    /// Senses from every robot's current pose without moving anyone. Used to
    /// reveal the start area of an episode.
    pub fn initial_sense(&mut self) -> StepEvents {
        let mut events = StepEvents::new(self.robots.len());
        self.sense_and_cover(&mut events);
        events
    }

    /// Advances the world by one step.
    ///
    /// Turns apply at once. Moves are resolved in rounds: in each round robots
    /// are visited in id order and a move succeeds when its destination is in
    /// bounds, traversable, not occupied, and not also wanted by a lower-id robot
    /// that is still waiting. Rounds repeat while some move succeeds, so a robot
    /// may follow another out of a cell; moves left over are collisions.
    pub fn step(&mut self, actions: &[PrimitiveAction]) -> Result<StepEvents> {
        if actions.len() != self.robots.len() {
            return Err(Error::ActionArityMismatch { expected: self.robots.len(), got: actions.len() });
        }
        let mut events = StepEvents::new(self.robots.len());
        let mut pending: Vec<(usize, Coord)> = Vec::new();
        for (i, action) in actions.iter().enumerate() {
            let pose = self.robots[i];
            let heading = match action {
                PrimitiveAction::MoveForward => Some(pose.heading),
                PrimitiveAction::MoveBackward => Some(pose.heading.opposite()),
                PrimitiveAction::TurnLeft => {
                    self.robots[i].heading = pose.heading.turn_left();
                    None
                }
                PrimitiveAction::TurnRight => {
                    self.robots[i].heading = pose.heading.turn_right();
                    None
                }
                PrimitiveAction::Stop => None,
            };
            if let Some(h) = heading {
                let (dx, dy) = h.delta();
                match self.offset(pose.pos, dx, dy).filter(|d| self.kind(*d).is_traversable()) {
                    Some(d) => pending.push((i, d)),
                    None => events.collisions[i] = true,
                }
            }
        }
        loop {
            let mut moved = false;
            let mut k = 0;
            while k < pending.len() {
                let (i, d) = pending[k];
                let occupied = self.robots.iter().any(|r| r.pos == d);
                let contested = pending[..k].iter().any(|&(_, other)| other == d);
                if occupied || contested {
                    k += 1;
                } else {
                    self.robots[i].pos = d;
                    pending.remove(k);
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }
        for (i, _) in pending {
            events.collisions[i] = true;
        }
        self.sense_and_cover(&mut events);
        self.step_count += 1;
        Ok(events)
    }

    fn sense_and_cover(&mut self, events: &mut StepEvents) {
        let mut fresh = Vec::new();
        for i in 0..self.robots.len() {
            let pos = self.robots[i].pos;
            for k in 0..self.disc.len() {
                let (dx, dy) = self.disc[k];
                let Some(c) = self.offset(pos, dx, dy) else { continue };
                let idx = self.index(c);
                self.seen_by[i][idx] = true;
                if !self.explored[idx] {
                    self.explored[idx] = true;
                    if self.kind[idx].is_traversable() {
                        self.explored_free += 1;
                    }
                    events.newly_explored[i] += 1;
                    fresh.push(idx);
                }
            }
        }
        for &idx in &fresh {
            let c = self.coord(idx);
            self.refresh_frontier(c);
            for h in Heading::ALL {
                let (dx, dy) = h.delta();
                if let Some(n) = self.offset(c, dx, dy) {
                    self.refresh_frontier(n);
                }
            }
        }
        fresh.sort_unstable();
        events.explored_cells = fresh.into_iter().map(|i| self.coord(i)).collect();
        for i in 0..self.robots.len() {
            let idx = self.index(self.robots[i].pos);
            if self.kind[idx] == CellKind::Target && !self.covered[idx] {
                self.covered[idx] = true;
                self.covered_by[idx] = Some(i);
                self.covered_count += 1;
                events.targets_covered[i] = 1;
                events.covered_cells.push(self.robots[i].pos);
            }
        }
    }

    fn refresh_frontier(&mut self, c: Coord) {
        let idx = self.index(c);
        let is_frontier = self.explored[idx]
            && self.kind[idx].is_traversable()
            && self.neighbors4(c).any(|(_, n)| !self.is_explored(n));
        self.frontier[idx] = is_frontier;
    }

    /// Explored non-obstacle cells with at least one unexplored 4-neighbour, row-major.
    pub fn frontier_cells(&self) -> Vec<Coord> {
        self.frontier
            .iter()
            .enumerate()
            .filter(|(_, f)| **f)
            .map(|(i, _)| self.coord(i))
            .collect()
    }

    /// Undirected communication graph: `i` and `j` are adjacent iff their
    /// Euclidean distance is at most `r_comm`.
    pub fn comm_graph(&self) -> Vec<Vec<usize>> {
        let n = self.robots.len();
        let r2 = self.r_comm * self.r_comm;
        let mut adj = vec![Vec::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.robots[i].pos.dist2(self.robots[j].pos) as f64) <= r2 {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
        adj
    }

    /// Serializes the ground-truth layout in the map text format.
    pub fn to_map_text(&self) -> Result<String> {
        if self.robots.len() > 10 {
            return Err(Error::MapFormat(format!("{} robots cannot be encoded as digits", self.robots.len())));
        }
        let mut rows = vec![Vec::with_capacity(self.width); self.height];
        for y in 0..self.height {
            for x in 0..self.width {
                rows[y].push(match self.kind[y * self.width + x] {
                    CellKind::Free => '.',
                    CellKind::Obstacle => '#',
                    CellKind::Target => 'T',
                });
            }
        }
        for r in &self.robots {
            if self.kind(r.pos) == CellKind::Target {
                return Err(Error::MapFormat(format!("robot {} stands on a target", r.id)));
            }
            rows[r.pos.y][r.pos.x] = char::from_digit(r.id as u32, 10).expect("id < 10");
        }
        let mut out = String::new();
        writeln!(out, "{} {}", self.width, self.height).unwrap();
        for row in rows {
            out.extend(row);
            out.push('\n');
        }
        Ok(out)
    }

    /// Parses the map text format. Robots start facing North.
    pub fn from_map_text(text: &str, r_fov: usize, r_comm: f64) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::MapFormat("empty input".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::MapFormat(format!("bad header {header:?}"))))
            .collect::<Result<_>>()?;
        let [width, height] = dims[..] else {
            return Err(Error::MapFormat(format!("header must be \"W H\", got {header:?}")));
        };
        let mut kind = Vec::with_capacity(width * height);
        let mut found: Vec<Option<Coord>> = vec![None; 10];
        for y in 0..height {
            let line = lines.next().ok_or_else(|| Error::MapFormat(format!("missing row {y}")))?;
            let chars: Vec<char> = line.trim_end_matches('\r').chars().collect();
            if chars.len() != width {
                return Err(Error::MapFormat(format!("row {y} has {} cells, expected {width}", chars.len())));
            }
            for (x, ch) in chars.into_iter().enumerate() {
                kind.push(match ch {
                    '.' => CellKind::Free,
                    '#' => CellKind::Obstacle,
                    'T' => CellKind::Target,
                    d @ '0'..='9' => {
                        let id = d.to_digit(10).unwrap() as usize;
                        if found[id].replace(Coord::new(x, y)).is_some() {
                            return Err(Error::MapFormat(format!("robot {id} appears twice")));
                        }
                        CellKind::Free
                    }
                    other => return Err(Error::MapFormat(format!("unknown cell {other:?} at ({x}, {y})"))),
                });
            }
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::MapFormat("trailing rows".into()));
        }
        let n_robots = found.iter().take_while(|f| f.is_some()).count();
        if found[n_robots..].iter().any(Option::is_some) {
            return Err(Error::MapFormat("robot ids must be contiguous from 0".into()));
        }
        let robots = found[..n_robots]
            .iter()
            .enumerate()
            .map(|(id, pos)| RobotPose { id, pos: pos.unwrap(), heading: Heading::North })
            .collect();
        Self::new(width, height, kind, robots, r_fov, r_comm)
    }
}

/// Number of non-obstacle cells reachable from the first one, 4-connected.
pub(crate) fn largest_free_component_from_first(kind: &[CellKind], width: usize, height: usize) -> usize {
    let Some(start) = kind.iter().position(|k| k.is_traversable()) else {
        return 0;
    };
    let mut seen = vec![false; kind.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut count = 0;
    while let Some(idx) = queue.pop_front() {
        count += 1;
        let (x, y) = (idx % width, idx / width);
        let mut visit = |n: usize| {
            if !seen[n] && kind[n].is_traversable() {
                seen[n] = true;
                queue.push_back(n);
            }
        };
        if x > 0 {
            visit(idx - 1);
        }
        if x + 1 < width {
            visit(idx + 1);
        }
        if y > 0 {
            visit(idx - width);
        }
        if y + 1 < height {
            visit(idx + width);
        }
    }
    count
}

/// The first `count` Free cells in BFS order from `start` over traversable cells.
fn nearest_open_cells(kind: &[CellKind], width: usize, height: usize, start: usize, count: usize) -> Vec<usize> {
    let mut seen = vec![false; kind.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut out = Vec::with_capacity(count);
    while let Some(idx) = queue.pop_front() {
        if kind[idx] == CellKind::Free {
            out.push(idx);
            if out.len() == count {
                break;
            }
        }
        let (x, y) = (idx % width, idx / width);
        let mut next = Vec::with_capacity(4);
        if y > 0 {
            next.push(idx - width);
        }
        if x + 1 < width {
            next.push(idx + 1);
        }
        if y + 1 < height {
            next.push(idx + width);
        }
        if x > 0 {
            next.push(idx - 1);
        }
        for n in next {
            if !seen[n] && kind[n].is_traversable() {
                seen[n] = true;
                queue.push_back(n);
            }
        }
    }
    out
}

/// Generates a random map whose non-obstacle cells form one 4-connected
/// component. Obstacles are added one at a time in shuffled order and a
/// candidate is skipped when it would disconnect the free space.
pub fn generate_map(config: &ScenarioConfig) -> Result<GridWorld> {
    config.validate()?;
    let (w, h) = (config.width, config.height);
    let n = w * h;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let mut kind = vec![CellKind::Free; n];
        let mut pending: Vec<usize> = (0..n).collect();
        pending.shuffle(&mut rng);
        let mut placed = 0;
        let mut free = n;
        while placed < config.n_obstacles {
            let mut progress = false;
            pending.retain(|&idx| {
                if placed == config.n_obstacles {
                    return true;
                }
                kind[idx] = CellKind::Obstacle;
                if free - 1 == 0 || largest_free_component_from_first(&kind, w, h) == free - 1 {
                    placed += 1;
                    free -= 1;
                    progress = true;
                    false
                } else {
                    kind[idx] = CellKind::Free;
                    true
                }
            });
            if !progress {
                break;
            }
        }
        if placed < config.n_obstacles {
            continue;
        }

        let mut open: Vec<usize> = (0..n).filter(|&i| kind[i] == CellKind::Free).collect();
        open.shuffle(&mut rng);
        if open.len() < config.n_targets + config.n_robots {
            continue;
        }
        for &idx in &open[..config.n_targets] {
            kind[idx] = CellKind::Target;
        }
        let starts = match config.spawn {
            SpawnMode::Scattered => open[config.n_targets..config.n_targets + config.n_robots].to_vec(),
            SpawnMode::Clustered => nearest_open_cells(&kind, w, h, open[config.n_targets], config.n_robots),
        };
        let robots = starts
            .iter()
            .enumerate()
            .map(|(id, &idx)| RobotPose { id, pos: Coord::new(idx % w, idx / w), heading: Heading::North })
            .collect();
        return GridWorld::new(w, h, kind, robots, config.r_fov, config.r_comm);
    }
    Err(Error::InfeasibleScenario(format!(
        "no connected placement of {} obstacles on {}x{} after {} attempts",
        config.n_obstacles, w, h, MAX_GENERATION_ATTEMPTS
    )))
}
