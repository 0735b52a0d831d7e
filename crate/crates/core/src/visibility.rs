//! Fields of view, line of sight, per-step observations and the shared
//! pursuer-team history.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{AgentState, EpisodeState, Heading, Role};
use crate::map::{Cell, CellKind, GridMap};

/// Chebyshev view radii.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FovConfig {
    pub hlp_radius: i32,
    pub ground_radius: i32,
}

impl Default for FovConfig {
    fn default() -> Self {
        Self { hlp_radius: 4, ground_radius: 2 }
    }
}

/// Cells seen by the overhead pursuer: everything within the radius except
/// foliage canopies. Rooftops are visible. Sorted row-major.
pub fn hlp_fov(map: &GridMap, position: Cell, radius: i32) -> Vec<Cell> {
    let mut out = Vec::with_capacity(((2 * radius + 1) * (2 * radius + 1)) as usize);
    for row in (position.row - radius).max(0)..=(position.row + radius).min(map.height() as i32 - 1) {
        for col in (position.col - radius).max(0)..=(position.col + radius).min(map.width() as i32 - 1) {
            let c = Cell::new(col, row);
            if map.kind(c) != CellKind::Foliage {
                out.push(c);
            }
        }
    }
    out
}

/// True when `offset` lies in the 90 degree forward cone of `heading`
/// (diagonal boundaries included). The origin is not in the cone.
pub fn in_forward_sector(heading: Heading, dcol: i32, drow: i32) -> bool {
    let (forward, lateral) = match heading {
        Heading::E => (dcol, drow),
        Heading::W => (-dcol, drow),
        Heading::N => (-drow, dcol),
        Heading::S => (drow, dcol),
    };
    forward >= 1 && lateral.abs() <= forward
}

/// Cells seen by a forward-facing ground camera. The observer's own cell is
/// always included. Sorted row-major.
pub fn ground_fov(map: &GridMap, position: Cell, heading: Heading, radius: i32) -> Vec<Cell> {
    let mut out = Vec::with_capacity(((radius + 1) * (radius + 1)) as usize);
    for row in (position.row - radius).max(0)..=(position.row + radius).min(map.height() as i32 - 1) {
        for col in (position.col - radius).max(0)..=(position.col + radius).min(map.width() as i32 - 1) {
            let c = Cell::new(col, row);
            if c == position
                || (in_forward_sector(heading, col - position.col, row - position.row)
                    && line_of_sight(map, position, c))
            {
                out.push(c);
            }
        }
    }
    out
}

/// Visits the cells whose interior is crossed by the segment joining the two
/// cell centres, excluding `from` and including `to`. A segment that passes
/// exactly through a lattice corner does not visit the two cells sharing it.
pub fn supercover(from: Cell, to: Cell, mut visit: impl FnMut(Cell) -> bool) {
    let dx = (to.col - from.col).abs();
    let dy = (to.row - from.row).abs();
    let sx = (to.col - from.col).signum();
    let sy = (to.row - from.row).signum();
    let (mut ix, mut iy) = (0, 0);
    let mut c = from;
    while ix < dx || iy < dy {
        // Compare the parameters at which the ray crosses the next vertical
        // and horizontal grid lines: (1 + 2ix) / 2dx versus (1 + 2iy) / 2dy.
        let decision = (1 + 2 * ix) * dy - (1 + 2 * iy) * dx;
        if decision == 0 {
            c = c.offset(sx, sy);
            ix += 1;
            iy += 1;
        } else if decision < 0 {
            c = c.offset(sx, 0);
            ix += 1;
        } else {
            c = c.offset(0, sy);
            iy += 1;
        }
        if !visit(c) {
            return;
        }
    }
}

/// Ground-level line of sight: blocked only by a building strictly between
/// the endpoints. A building at `to` is itself visible.
pub fn line_of_sight(map: &GridMap, from: Cell, to: Cell) -> bool {
    let mut clear = true;
    supercover(from, to, |c| {
        if c == to {
            return false;
        }
        if map.kind(c) == CellKind::Building {
            clear = false;
            return false;
        }
        true
    });
    clear
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Detection {
    pub role: Role,
    pub cell: Cell,
}

/// What one agent saw at one timestep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub t: u32,
    pub observer: Role,
    pub visible_cells: Vec<Cell>,
    pub detections: Vec<Detection>,
    pub self_state: AgentState,
}

impl Observation {
    pub fn detected(&self, role: Role) -> Option<Cell> {
        self.detections.iter().find(|d| d.role == role).map(|d| d.cell)
    }
}

pub fn fov_of(map: &GridMap, agent: &AgentState, fov: FovConfig) -> Vec<Cell> {
    match agent.role {
        Role::Hlp => hlp_fov(map, agent.position, fov.hlp_radius),
        Role::Llp | Role::Evader => ground_fov(map, agent.position, agent.heading, fov.ground_radius),
    }
}

/// Builds the observation of `observer` in `state`. Detections are the agents
/// standing on visible cells, except that the evader never sees the HLP.
/// Foliage cells are never in the HLP's visible set, so nothing under a
/// canopy is detected from above.
pub fn make_observation(map: &GridMap, state: &EpisodeState, observer: Role, fov: FovConfig) -> Observation {
    let me = *state.agent(observer);
    let visible_cells = fov_of(map, &me, fov);
    let detections = Role::ALL
        .into_iter()
        .filter(|r| !(observer == Role::Evader && *r == Role::Hlp))
        .map(|r| Detection { role: r, cell: state.agent(r).position })
        .filter(|d| visible_cells.binary_search_by(|c| row_major(c).cmp(&row_major(&d.cell))).is_ok())
        .collect();
    Observation { t: state.t, observer, visible_cells, detections, self_state: me }
}

fn row_major(c: &Cell) -> (i32, i32) {
    (c.row, c.col)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HistoryError {
    #[error("non-contiguous timestep: expected {expected}, got {got}")]
    NonContiguousTimestep { expected: u32, got: u32 },
    #[error("observation from {got} where {expected} was expected")]
    WrongObserver { expected: Role, got: Role },
}

/// Both pursuers' raw observations at one timestep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeamRecord {
    pub t: u32,
    pub hlp: Observation,
    pub llp: Observation,
}

impl TeamRecord {
    /// Evader cell if either pursuer sees it.
    pub fn evader_detection(&self) -> Option<Cell> {
        self.hlp.detected(Role::Evader).or_else(|| self.llp.detected(Role::Evader))
    }
}

/// The pursuer team's shared, time-ordered observation record.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeamHistory {
    entries: Vec<TeamRecord>,
}

impl TeamHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[TeamRecord] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last(&self) -> Option<&TeamRecord> {
        self.entries.last()
    }

    /// Prefix containing the entries with timestep at most `t`.
    pub fn prefix(&self, t: u32) -> &[TeamRecord] {
        let n = (t as usize + 1).min(self.entries.len());
        &self.entries[..n]
    }

    fn next_t(&self) -> u32 {
        self.entries.last().map_or(0, |r| r.t + 1)
    }

    /// Appends both pursuers' observations for the next timestep.
    pub fn fuse(&mut self, obs_h: Observation, obs_l: Observation) -> Result<(), HistoryError> {
        let expected = self.next_t();
        for o in [&obs_h, &obs_l] {
            if o.t != expected {
                return Err(HistoryError::NonContiguousTimestep { expected, got: o.t });
            }
        }
        if obs_h.observer != Role::Hlp {
            return Err(HistoryError::WrongObserver { expected: Role::Hlp, got: obs_h.observer });
        }
        if obs_l.observer != Role::Llp {
            return Err(HistoryError::WrongObserver { expected: Role::Llp, got: obs_l.observer });
        }
        self.entries.push(TeamRecord { t: expected, hlp: obs_h, llp: obs_l });
        Ok(())
    }
}

/// Functional form of [`TeamHistory::fuse`].
pub fn fuse_team_observations(
    mut history: TeamHistory,
    obs_h: Observation,
    obs_l: Observation,
) -> Result<TeamHistory, HistoryError> {
    history.fuse(obs_h, obs_l)?;
    Ok(history)
}

/// The evader's own observation record.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaderHistory {
    entries: Vec<Observation>,
}

impl EvaderHistory {
    pub fn entries(&self) -> &[Observation] {
        &self.entries
    }

    pub fn push(&mut self, obs: Observation) -> Result<(), HistoryError> {
        let expected = self.entries.last().map_or(0, |o| o.t + 1);
        if obs.t != expected {
            return Err(HistoryError::NonContiguousTimestep { expected, got: obs.t });
        }
        if obs.observer != Role::Evader {
            return Err(HistoryError::WrongObserver { expected: Role::Evader, got: obs.observer });
        }
        self.entries.push(obs);
        Ok(())
    }
}
