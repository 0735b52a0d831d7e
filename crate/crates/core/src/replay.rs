//! Replay rendering: one frame per timestep as text or PNG.

use std::collections::HashSet;

use image::{Rgb, RgbImage};
use thiserror::Error;

use crate::game::{AgentState, EpisodeState, Role, Status};
use crate::log::EpisodeLog;
use crate::map::{Cell, CellKind, GridMap};
use crate::visibility::fov_of;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayError {
    #[error("map hash mismatch: log {log}, map {map}")]
    HashMismatch { log: String, map: String },
}

/// Agent positions and team view at one timestep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub t: u32,
    pub hlp: AgentState,
    pub llp: AgentState,
    pub evader: AgentState,
    pub goal: Cell,
    pub team_view: HashSet<Cell>,
    pub status: Status,
}

impl Frame {
    /// Map glyphs with `*` on team-visible open cells, `H`, `L`, `E` for the
    /// agents (lower-case when outside the team view) and `G` for the goal.
    pub fn to_text(&self, map: &GridMap) -> String {
        let mut out = format!("t={} status={:?}\n", self.t, self.status);
        for row in 0..map.height() as i32 {
            for col in 0..map.width() as i32 {
                let c = Cell::new(col, row);
                let seen = self.team_view.contains(&c);
                let ch = if c == self.evader.position {
                    if seen {
                        'E'
                    } else {
                        'e'
                    }
                } else if c == self.llp.position {
                    'L'
                } else if c == self.hlp.position {
                    'H'
                } else if c == self.goal {
                    'G'
                } else if seen && map.kind(c) == CellKind::Open {
                    '*'
                } else {
                    map.kind(c).glyph()
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }

    /// Raster frame with `scale` pixels per cell.
    pub fn to_image(&self, map: &GridMap, scale: u32) -> RgbImage {
        let scale = scale.max(1);
        let mut img = RgbImage::new(map.width() as u32 * scale, map.height() as u32 * scale);
        for row in 0..map.height() as i32 {
            for col in 0..map.width() as i32 {
                let c = Cell::new(col, row);
                let mut color = match map.kind(c) {
                    CellKind::Open => Rgb([235, 235, 225]),
                    CellKind::Building => Rgb([70, 70, 80]),
                    CellKind::Foliage => Rgb([60, 150, 70]),
                };
                if self.team_view.contains(&c) {
                    color = Rgb([color[0] / 2 + 100, color[1] / 2 + 100, color[2] / 2 + 30]);
                }
                if c == self.goal {
                    color = Rgb([240, 200, 0]);
                }
                if c == self.hlp.position {
                    color = Rgb([40, 90, 220]);
                }
                if c == self.llp.position {
                    color = Rgb([0, 30, 140]);
                }
                if c == self.evader.position {
                    color = Rgb([210, 30, 30]);
                }
                for y in 0..scale {
                    for x in 0..scale {
                        img.put_pixel(col as u32 * scale + x, row as u32 * scale + y, color);
                    }
                }
            }
        }
        img
    }
}

/// Frames for `t = 0..=final_t`. The map must be the one the log was
/// recorded on.
pub fn render_replay(log: &EpisodeLog, map: &GridMap) -> Result<Vec<Frame>, ReplayError> {
    let map_hash = map.hash_hex();
    if map_hash != log.header.map_hash {
        return Err(ReplayError::HashMismatch { log: log.header.map_hash.clone(), map: map_hash });
    }
    let goal = log.header.scenario.evader_goal;
    let frame = |t, hlp: AgentState, llp: AgentState, evader: AgentState, status| {
        let state = EpisodeState { hlp, llp, evader, evader_goal: goal, t, horizon: log.header.horizon, status };
        let team_view = [Role::Hlp, Role::Llp]
            .into_iter()
            .flat_map(|r| fov_of(map, state.agent(r), log.header.fov))
            .collect();
        Frame { t, hlp, llp, evader, goal, team_view, status }
    };
    let mut frames: Vec<Frame> =
        log.steps.iter().map(|s| frame(s.t, s.hlp, s.llp, s.evader, Status::Running)).collect();
    let f = &log.footer;
    frames.push(frame(f.final_t, f.hlp, f.llp, f.evader, f.status));
    Ok(frames)
}
