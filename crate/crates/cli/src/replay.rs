//! Line-delimited JSON replays and a validator that re-derives the counts.

use std::collections::HashSet;

use areasearch_core::{CellKind, GridWorld, Heading, StepEvents, TeamDecision};
use areasearch_core::eval::EpisodeObserver;
use serde::{Deserialize, Serialize};

use crate::render::{render_ppm, FrameSink};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayHeader {
    pub kind: String,
    pub width: usize,
    pub height: usize,
    pub n_robots: usize,
    pub seed: u64,
    pub policy: String,
    /// Map text of the start state.
    pub map: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayStep {
    pub step: usize,
    pub positions: Vec<[usize; 2]>,
    pub headings: Vec<String>,
    pub roles: Option<Vec<String>>,
    pub actions: Option<Vec<String>>,
    pub newly_explored: Vec<[usize; 2]>,
    pub newly_covered: Vec<[usize; 2]>,
    pub explored_free: usize,
    pub covered: usize,
}

fn heading_name(h: Heading) -> &'static str {
    match h {
        Heading::North => "N",
        Heading::East => "E",
        Heading::South => "S",
        Heading::West => "W",
    }
}

/// Collects replay lines (and optional frames) while an episode runs.
pub struct ReplayRecorder<'a> {
    pub lines: Vec<String>,
    frames: Option<&'a mut dyn FrameSink>,
    scale: usize,
    step: usize,
}

impl<'a> ReplayRecorder<'a> {
    pub fn new(header: &ReplayHeader, frames: Option<&'a mut dyn FrameSink>, scale: usize) -> Self {
        let lines = vec![serde_json::to_string(header).expect("header serialises")];
        Self { lines, frames, scale, step: 0 }
    }

    pub fn into_text(self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }
}

impl EpisodeObserver for ReplayRecorder<'_> {
    fn observe(&mut self, world: &GridWorld, decision: Option<&TeamDecision>, events: &StepEvents) -> areasearch_core::Result<()> {
        let xy = |c: &areasearch_core::Coord| [c.x, c.y];
        let rec = ReplayStep {
            step: self.step,
            positions: world.robots().iter().map(|r| xy(&r.pos)).collect(),
            headings: world.robots().iter().map(|r| heading_name(r.heading).to_string()).collect(),
            roles: decision.and_then(|d| d.roles.as_ref()).map(|rs| rs.iter().map(|r| format!("{r:?}")).collect()),
            actions: decision.map(|d| d.actions.iter().map(|a| format!("{a:?}")).collect()),
            newly_explored: events.explored_cells.iter().map(xy).collect(),
            newly_covered: events.covered_cells.iter().map(xy).collect(),
            explored_free: world.explored_free(),
            covered: world.covered_count(),
        };
        self.lines.push(serde_json::to_string(&rec).expect("record serialises"));
        if let Some(sink) = self.frames.as_deref_mut() {
            sink.frame(self.step, &render_ppm(world, self.scale))?;
        }
        self.step += 1;
        Ok(())
    }
}

/// Checks a replay: header first, consecutive steps from 0, one pose per
/// robot on traversable cells with no two robots sharing a cell, each cell
/// explored at most once, and running counts that match the listed cells.
/// Returns the number of step records.
pub fn validate_replay(text: &str) -> Result<usize, String> {
    let mut lines = text.lines();
    let header: ReplayHeader =
        serde_json::from_str(lines.next().ok_or("empty replay")?).map_err(|e| format!("header: {e}"))?;
    if header.kind != "header" {
        return Err("first record is not a header".into());
    }
    let world = GridWorld::from_map_text(&header.map, 1, 0.0).map_err(|e| format!("header map: {e}"))?;
    if world.width() != header.width || world.height() != header.height || world.n_robots() != header.n_robots {
        return Err("header dimensions disagree with its map".into());
    }
    let mut explored: HashSet<[usize; 2]> = HashSet::new();
    let mut covered: HashSet<[usize; 2]> = HashSet::new();
    let mut count = 0;
    for (i, line) in lines.enumerate() {
        let rec: ReplayStep = serde_json::from_str(line).map_err(|e| format!("record {i}: {e}"))?;
        if rec.step != i {
            return Err(format!("record {i} has step {}", rec.step));
        }
        if rec.positions.len() != header.n_robots || rec.headings.len() != header.n_robots {
            return Err(format!("step {i}: wrong robot count"));
        }
        if (i == 0) != rec.actions.is_none() {
            return Err(format!("step {i}: actions must be absent exactly at step 0"));
        }
        let mut occupied = HashSet::new();
        for p in &rec.positions {
            if p[0] >= header.width || p[1] >= header.height {
                return Err(format!("step {i}: robot out of bounds"));
            }
            if world.kind(areasearch_core::Coord::new(p[0], p[1])) == CellKind::Obstacle {
                return Err(format!("step {i}: robot on an obstacle"));
            }
            if !occupied.insert(*p) {
                return Err(format!("step {i}: two robots share a cell"));
            }
        }
        for c in &rec.newly_explored {
            if !explored.insert(*c) {
                return Err(format!("step {i}: cell {c:?} explored twice"));
            }
        }
        for c in &rec.newly_covered {
            if world.kind(areasearch_core::Coord::new(c[0], c[1])) != CellKind::Target || !covered.insert(*c) {
                return Err(format!("step {i}: bad coverage of {c:?}"));
            }
            if !rec.positions.contains(c) {
                return Err(format!("step {i}: covered cell {c:?} holds no robot"));
            }
        }
        let free = explored
            .iter()
            .filter(|c| world.kind(areasearch_core::Coord::new(c[0], c[1])) != CellKind::Obstacle)
            .count();
        if free != rec.explored_free || covered.len() != rec.covered {
            return Err(format!("step {i}: counts disagree with listed cells"));
        }
        count += 1;
    }
    if count == 0 {
        return Err("no step records".into());
    }
    Ok(count)
}
