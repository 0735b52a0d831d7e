//! History summaries. Trackers fold observation histories one record at a
//! time; the resulting feature snapshots are what policies read.
//!
//! Each snapshot also carries per-action feature vectors: for every primitive
//! action, how the move changes a handful of quantities (distance to the last
//! known evader, distance to its extrapolated position, unexplored area in
//! view, ...). Trained policies are linear in these vectors.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::arena::Arena;
use crate::game::{Action, AgentState, Role};
use crate::map::{Cell, CellKind};
use crate::visibility::{hlp_fov, EvaderHistory, Observation, TeamHistory, TeamRecord};

/// Steps after which a cell counts as unexplored again.
pub const REVISIT_WINDOW: u32 = 15;

pub const PURSUER_FEATURES: usize = 8;
pub const PURSUER_CONTEXTS: usize = 192;
pub const EVADER_FEATURES: usize = 7;
pub const EVADER_CONTEXTS: usize = 48;

pub type PursuerPhi = [[f64; PURSUER_FEATURES]; 5];
pub type EvaderPhi = [[f64; EVADER_FEATURES]; 5];

/// Identifies the feature layout; persisted policies must match it.
pub fn feature_schema_hash() -> String {
    let desc = format!(
        "pursuer:ctx=staleness4xphase4xdrift3xzone4:{PURSUER_CONTEXTS}x{PURSUER_FEATURES}[bias,chase,lead(adaptive),explore,foliage,teammate,stay,center];\
         evader:ctx=llp-staleness4xgoal3xphase4:{EVADER_CONTEXTS}x{EVADER_FEATURES}[bias,goal,flee(prior=west),cover,stay,exposure,hide];\
         revisit={REVISIT_WINDOW}"
    );
    hex::encode(&Sha256::digest(desc.as_bytes())[..8])
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FeatureError {
    #[error("cannot summarise an empty history")]
    EmptyHistory,
}

/// Staleness bucket: {0}, {1, 2}, {3..5}, {6+}.
pub fn staleness_bucket(staleness: u32) -> usize {
    match staleness {
        0 => 0,
        1..=2 => 1,
        3..=5 => 2,
        _ => 3,
    }
}

/// Episode phase bucket: {0..9}, {10..24}, {25..49}, {50+}.
pub fn phase_bucket(t: u32) -> usize {
    match t {
        0..=9 => 0,
        10..=24 => 1,
        25..=49 => 2,
        _ => 3,
    }
}

/// Pursuer-team summary at one timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PursuerFeatures {
    pub t: u32,
    pub hlp: AgentState,
    pub llp: AgentState,
    pub last_known_evader: Option<Cell>,
    /// Steps since the last team detection; `horizon + 1` when never seen.
    pub staleness: u32,
    /// Sign of the evader's most recent observed displacement.
    pub evader_velocity: (i32, i32),
    pub explored_fraction: f64,
    pub context: usize,
    pub hlp_phi: PursuerPhi,
    pub llp_phi: PursuerPhi,
}

/// Evader-side summary at one timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaderFeatures {
    pub t: u32,
    pub me: AgentState,
    pub goal: Cell,
    pub last_known_llp: Option<Cell>,
    /// Steps since the LLP was last seen; `horizon + 1` when never seen.
    pub llp_staleness: u32,
    pub goal_distance: u32,
    /// Chebyshev distance to the last known LLP cell, if any.
    pub nearest_pursuer_distance: Option<u32>,
    pub context: usize,
    pub phi: EvaderPhi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BeliefFeatures {
    Pursuer(PursuerFeatures),
    Evader(EvaderFeatures),
}

/// Incremental fold over a [`TeamHistory`].
#[derive(Debug, Clone)]
pub struct PursuerTracker {
    arena: Arena,
    t: Option<u32>,
    hlp: Option<AgentState>,
    llp: Option<AgentState>,
    last_seen: Vec<i64>,
    explored: usize,
    last_known: Option<(Cell, u32)>,
    velocity: (i32, i32),
}

impl PursuerTracker {
    pub fn new(arena: &Arena) -> Self {
        Self {
            arena: arena.clone(),
            t: None,
            hlp: None,
            llp: None,
            last_seen: vec![-1; arena.map().len()],
            explored: 0,
            last_known: None,
            velocity: (0, 0),
        }
    }

    pub fn update(&mut self, rec: &TeamRecord) {
        let map = self.arena.map();
        for obs in [&rec.hlp, &rec.llp] {
            for &c in &obs.visible_cells {
                let i = map.index(c);
                if self.last_seen[i] < 0 && map.kind(c).is_accessible() {
                    self.explored += 1;
                }
                self.last_seen[i] = rec.t as i64;
            }
        }
        if let Some(cell) = rec.evader_detection() {
            if let Some((prev, pt)) = self.last_known {
                if rec.t - pt <= 3 {
                    self.velocity = ((cell.col - prev.col).signum(), (cell.row - prev.row).signum());
                }
            }
            self.last_known = Some((cell, rec.t));
        }
        self.t = Some(rec.t);
        self.hlp = Some(rec.hlp.self_state);
        self.llp = Some(rec.llp.self_state);
    }

    pub fn features(&self) -> Result<PursuerFeatures, FeatureError> {
        let t = self.t.ok_or(FeatureError::EmptyHistory)?;
        let (hlp, llp) = (self.hlp.unwrap(), self.llp.unwrap());
        let horizon = self.arena.horizon;
        let staleness = self.last_known.map_or(horizon + 1, |(_, st)| t - st);
        let explored_fraction = self.explored as f64 / self.arena.map().accessible_count() as f64;
        let moving = (self.velocity.0 + 1) as usize;
        let width = self.arena.map().width() as i32;
        let zone = self.last_known.map_or(0, |(c, _)| (4 * c.col / width).clamp(0, 3) as usize);
        let context = ((staleness_bucket(staleness) * 4 + phase_bucket(t)) * 3 + moving) * 4 + zone;
        let last_known_evader = self.last_known.map(|(c, _)| c);
        // The overhead pursuer tracks the evader's next position; the ground
        // pursuer aims where the evader will be by the time it gets there.
        let hlp_target = self.predicted_evader(staleness as i32 + 1);
        let llp_target = last_known_evader.and_then(|k| {
            let d = self.arena.ground_distance(llp.position, k)? as i32;
            self.predicted_evader(staleness as i32 + (d + 1) / 2)
        });
        Ok(PursuerFeatures {
            t,
            hlp,
            llp,
            last_known_evader,
            staleness,
            evader_velocity: self.velocity,
            explored_fraction,
            context,
            hlp_phi: self.hlp_phi(&hlp, &llp, last_known_evader, hlp_target, t),
            llp_phi: self.llp_phi(&llp, &hlp, last_known_evader, llp_target, t),
        })
    }

    /// Last known evader cell extrapolated `steps` ahead along its observed
    /// velocity (at most 8 steps, stopping before inaccessible cells).
    fn predicted_evader(&self, steps: i32) -> Option<Cell> {
        let (cell, _) = self.last_known?;
        let map = self.arena.map();
        let k = steps.min(8);
        let mut best = cell;
        for step in 1..=k {
            let c = cell.offset(self.velocity.0 * step, self.velocity.1 * step);
            if !map.is_accessible(c) {
                break;
            }
            best = c;
        }
        Some(best)
    }

    fn is_stale(&self, i: usize, t: u32) -> bool {
        let s = self.last_seen[i];
        s < 0 || (t as i64 - s) >= REVISIT_WINDOW as i64
    }

    fn stale_in_overhead_view(&self, at: Cell, t: u32) -> f64 {
        let map = self.arena.map();
        hlp_fov(map, at, self.arena.fov.hlp_radius)
            .into_iter()
            .filter(|c| map.kind(*c) == CellKind::Open && self.is_stale(map.index(*c), t))
            .count() as f64
    }

    fn stale_near(&self, at: Cell, t: u32) -> f64 {
        let map = self.arena.map();
        let r = self.arena.fov.ground_radius;
        let mut n = 0.0;
        for dr in -r..=r {
            for dc in -r..=r {
                let c = at.offset(dc, dr);
                if map.is_accessible(c) && self.is_stale(map.index(c), t) {
                    n += 1.0;
                }
            }
        }
        n
    }

    fn nearest_stale_foliage(&self, from: Cell, t: u32) -> Option<Cell> {
        let map = self.arena.map();
        self.arena
            .foliage_cells()
            .iter()
            .filter(|c| self.is_stale(map.index(**c), t))
            .filter_map(|c| self.arena.ground_distance(from, *c).map(|d| (d, *c)))
            .min()
            .map(|(_, c)| c)
    }

    fn hlp_phi(&self, me: &AgentState, mate: &AgentState, known: Option<Cell>, predicted: Option<Cell>, t: u32) -> PursuerPhi {
        let map = self.arena.map();
        let p = me.position;
        let span = (2 * self.arena.fov.hlp_radius + 1) as f64;
        let center = self.arena.center();
        let gain_here = self.stale_in_overhead_view(p, t);
        let mut phi = [[0.0; PURSUER_FEATURES]; 5];
        for a in Action::ALL {
            let n = a.apply(p);
            if !map.in_bounds(n) {
                continue;
            }
            let f = &mut phi[a.index()];
            f[0] = 1.0;
            if let Some(k) = known {
                f[1] = (p.manhattan(k) - n.manhattan(k)) as f64;
            }
            if let Some(q) = predicted {
                f[2] = (p.manhattan(q) - n.manhattan(q)) as f64;
            }
            if a != Action::Stay {
                f[3] = (self.stale_in_overhead_view(n, t) - gain_here) / span;
            }
            f[5] = (p.chebyshev(mate.position) - n.chebyshev(mate.position)) as f64;
            f[6] = if a == Action::Stay { 1.0 } else { 0.0 };
            f[7] = (p.manhattan(center) - n.manhattan(center)) as f64;
            // Overhead pursuer has no foliage feature; slot 4 stays zero.
        }
        phi
    }

    fn llp_phi(&self, me: &AgentState, mate: &AgentState, known: Option<Cell>, predicted: Option<Cell>, t: u32) -> PursuerPhi {
        let map = self.arena.map();
        let p = me.position;
        let gd = |a: Cell, b: Cell| self.arena.ground_distance(a, b).map(|d| d as f64);
        let area = ((2 * self.arena.fov.ground_radius + 1) * (2 * self.arena.fov.ground_radius + 1)) as f64;
        let gain_here = self.stale_near(p, t);
        let foliage = self.nearest_stale_foliage(p, t);
        let center = self.arena.center();
        let mut phi = [[0.0; PURSUER_FEATURES]; 5];
        for a in Action::ALL {
            let n = a.apply(p);
            if !map.is_accessible(n) {
                continue;
            }
            let f = &mut phi[a.index()];
            f[0] = 1.0;
            if let Some(k) = known {
                f[1] = gd(p, k).zip(gd(n, k)).map_or(0.0, |(x, y)| x - y);
            }
            if let Some(q) = predicted {
                f[2] = gd(p, q).zip(gd(n, q)).map_or(0.0, |(x, y)| x - y);
            }
            if a != Action::Stay {
                f[3] = (self.stale_near(n, t) - gain_here) / area;
            }
            if let Some(fc) = foliage {
                f[4] = gd(p, fc).zip(gd(n, fc)).map_or(0.0, |(x, y)| x - y);
            }
            f[5] = (p.manhattan(mate.position) - n.manhattan(mate.position)) as f64;
            f[6] = if a == Action::Stay { 1.0 } else { 0.0 };
            f[7] = gd(p, center).zip(gd(n, center)).map_or(0.0, |(x, y)| x - y);
        }
        phi
    }
}

/// Summarises a team history. Features at `t` depend only on entries up to
/// `t`.
pub fn summarize_team_history(history: &TeamHistory, arena: &Arena) -> Result<PursuerFeatures, FeatureError> {
    let mut tracker = PursuerTracker::new(arena);
    for rec in history.entries() {
        tracker.update(rec);
    }
    tracker.features()
}

/// Incremental fold over the evader's own observations.
#[derive(Debug, Clone)]
pub struct EvaderTracker {
    arena: Arena,
    goal: Cell,
    t: Option<u32>,
    me: Option<AgentState>,
    last_llp: Option<(Cell, u32)>,
}

impl EvaderTracker {
    pub fn new(arena: &Arena, goal: Cell) -> Self {
        Self { arena: arena.clone(), goal, t: None, me: None, last_llp: None }
    }

    pub fn update(&mut self, obs: &Observation) {
        if let Some(c) = obs.detected(Role::Llp) {
            self.last_llp = Some((c, obs.t));
        }
        self.t = Some(obs.t);
        self.me = Some(obs.self_state);
    }

    pub fn features(&self) -> Result<EvaderFeatures, FeatureError> {
        let t = self.t.ok_or(FeatureError::EmptyHistory)?;
        let me = self.me.unwrap();
        let map = self.arena.map();
        let horizon = self.arena.horizon;
        let llp_staleness = self.last_llp.map_or(horizon + 1, |(_, st)| t - st);
        let goal_distance = self.arena.ground_distance(me.position, self.goal).unwrap_or(u32::MAX);
        let goal_bucket = match goal_distance {
            0..=5 => 0,
            6..=12 => 1,
            _ => 2,
        };
        let context = (staleness_bucket(llp_staleness) * 3 + goal_bucket) * 4 + phase_bucket(t);
        let last_known_llp = self.last_llp.map(|(c, _)| c);
        let p = me.position;
        let gd = |a: Cell, b: Cell| self.arena.ground_distance(a, b).map(|d| d as f64);
        let nearest_foliage = self
            .arena
            .foliage_cells()
            .iter()
            .filter_map(|c| self.arena.ground_distance(p, *c).map(|d| (d, *c)))
            .min()
            .map(|(_, c)| c);
        let mut phi = [[0.0; EVADER_FEATURES]; 5];
        for a in Action::ALL {
            let n = a.apply(p);
            if !map.is_accessible(n) {
                continue;
            }
            let f = &mut phi[a.index()];
            f[0] = 1.0;
            f[1] = gd(p, self.goal).zip(gd(n, self.goal)).map_or(0.0, |(x, y)| x - y);
            // Before any sighting the pursuers are believed to be near their
            // spawn edge on the west side.
            f[2] = match last_known_llp {
                Some(l) if llp_staleness <= 5 => (n.chebyshev(l) - p.chebyshev(l)) as f64,
                Some(_) => 0.0,
                None => (n.col - p.col) as f64,
            };
            f[3] = if map.kind(n) == CellKind::Foliage { 1.0 } else { 0.0 };
            f[4] = if a == Action::Stay { 1.0 } else { 0.0 };
            f[5] = open_exposure(&self.arena, n);
            if let Some(fc) = nearest_foliage {
                f[6] = gd(p, fc).zip(gd(n, fc)).map_or(0.0, |(x, y)| x - y);
            }
        }
        Ok(EvaderFeatures {
            t,
            me,
            goal: self.goal,
            last_known_llp,
            llp_staleness,
            goal_distance,
            nearest_pursuer_distance: last_known_llp.map(|l| l.chebyshev(p) as u32),
            context,
            phi,
        })
    }
}

/// Fraction of the 3x3 block around `c` that is open ground (visible from
/// above and easy to approach).
pub(crate) fn open_exposure(arena: &Arena, c: Cell) -> f64 {
    let map = arena.map();
    let mut open = 0.0;
    for dr in -1..=1 {
        for dc in -1..=1 {
            let n = c.offset(dc, dr);
            if map.in_bounds(n) && map.kind(n) == CellKind::Open {
                open += 1.0;
            }
        }
    }
    open / 9.0
}

pub fn summarize_evader_history(history: &EvaderHistory, arena: &Arena, goal: Cell) -> Result<EvaderFeatures, FeatureError> {
    let mut tracker = EvaderTracker::new(arena, goal);
    for obs in history.entries() {
        tracker.update(obs);
    }
    tracker.features()
}
