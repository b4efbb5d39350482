//! Plain PPM (P3) frames.
//!
//! Palette: unexplored cells dark grey, explored free cells white, obstacles
//! grey, uncovered targets orange, covered targets tan, frontier cells green,
//! robots in a fixed colour per id.

use std::fmt::Write as _;
use std::path::PathBuf;

use areasearch_core::{CellKind, Coord, Error, GridWorld};

pub type Rgb = [u8; 3];

pub const UNEXPLORED: Rgb = [40, 40, 40];
pub const FREE: Rgb = [255, 255, 255];
pub const OBSTACLE: Rgb = [128, 128, 128];
pub const TARGET: Rgb = [255, 165, 0];
pub const COVERED: Rgb = [210, 180, 140];
pub const FRONTIER: Rgb = [0, 170, 0];
pub const ROBOTS: [Rgb; 10] = [
    [31, 119, 180],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [23, 190, 207],
    [188, 189, 34],
    [0, 0, 128],
    [255, 0, 255],
    [0, 128, 128],
];

pub fn cell_color(world: &GridWorld, c: Coord) -> Rgb {
    if let Some(r) = world.robots().iter().find(|r| r.pos == c) {
        return ROBOTS[r.id % ROBOTS.len()];
    }
    if !world.is_explored(c) {
        return UNEXPLORED;
    }
    match world.kind(c) {
        CellKind::Obstacle => OBSTACLE,
        CellKind::Target if world.is_covered(c) => COVERED,
        CellKind::Target => TARGET,
        CellKind::Free if world.is_frontier(c) => FRONTIER,
        CellKind::Free => FREE,
    }
}

/// The world as a P3 image with `scale`×`scale` pixels per cell.
pub fn render_ppm(world: &GridWorld, scale: usize) -> String {
    let (w, h) = (world.width() * scale, world.height() * scale);
    let mut s = String::with_capacity(w * h * 12 + 32);
    let _ = writeln!(s, "P3\n{w} {h}\n255");
    for py in 0..h {
        let row: Vec<String> = (0..w)
            .map(|px| {
                let [r, g, b] = cell_color(world, Coord::new(px / scale, py / scale));
                format!("{r} {g} {b}")
            })
            .collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

/// Receives rendered frames in order.
pub trait FrameSink {
    fn frame(&mut self, index: usize, ppm: &str) -> areasearch_core::Result<()>;
}

/// Writes `frame_00000.ppm`, `frame_00001.ppm`, ... into a directory.
pub struct DirSink {
    pub dir: PathBuf,
    pub written: usize,
}

impl FrameSink for DirSink {
    fn frame(&mut self, index: usize, ppm: &str) -> areasearch_core::Result<()> {
        let path = self.dir.join(format!("frame_{index:05}.ppm"));
        std::fs::write(&path, ppm).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        self.written += 1;
        Ok(())
    }
}

impl FrameSink for Vec<String> {
    fn frame(&mut self, _index: usize, ppm: &str) -> areasearch_core::Result<()> {
        self.push(ppm.to_string());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_matches_cell_types() {
        let mut world = GridWorld::from_map_text("5 1\n0...T\n", 2, 1.0).unwrap();
        world.initial_sense();
        assert_eq!(cell_color(&world, Coord::new(0, 0)), ROBOTS[0]);
        assert_eq!(cell_color(&world, Coord::new(1, 0)), FREE);
        assert_eq!(cell_color(&world, Coord::new(2, 0)), FRONTIER);
        assert_eq!(cell_color(&world, Coord::new(3, 0)), UNEXPLORED);
        let ppm = render_ppm(&world, 2);
        let mut lines = ppm.lines();
        assert_eq!(lines.next(), Some("P3"));
        assert_eq!(lines.next(), Some("10 2"));
        assert_eq!(lines.next(), Some("255"));
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn obstacle_and_target_colours() {
        let text = "3 1\n0#T\n";
        let mut world = GridWorld::from_map_text(text, 3, 1.0).unwrap();
        world.initial_sense();
        assert_eq!(cell_color(&world, Coord::new(1, 0)), OBSTACLE);
        assert_eq!(cell_color(&world, Coord::new(2, 0)), TARGET);
    }
}
