//! Independent oracles and small fixtures shared by the integration tests.
#![allow(dead_code)]

use num_rational::Rational64;
use rand::Rng;

use peg_core::game::Heading;
use peg_core::map::{Cell, CellKind, GridMap};
use peg_core::policy::{Policy, Scope};
use peg_core::rng::SimRng;
use peg_core::training::learner::{initial_policy, TrainConfig};
use peg_core::training::library::{LevelLibrary, LibraryEntry, Provenance};

/// Random map with roughly the given building and foliage densities. Not
/// necessarily connected, so it is built without validation.
pub fn random_map(rng: &mut SimRng, width: usize, height: usize, building: f64, foliage: f64) -> GridMap {
    let mut map = GridMap::open(width, height);
    for row in 0..height as i32 {
        for col in 0..width as i32 {
            let u: f64 = rng.gen();
            let kind = if u < building {
                CellKind::Building
            } else if u < building + foliage {
                CellKind::Foliage
            } else {
                CellKind::Open
            };
            map = map.with_cell_unchecked(Cell::new(col, row), kind);
        }
    }
    map
}

/// Exact test of whether the segment between the two cell centres passes
/// through the open interior of `cell`.
pub fn segment_crosses_interior(from: Cell, to: Cell, cell: Cell) -> bool {
    let half = Rational64::new(1, 2);
    let p = [Rational64::from(from.col as i64) + half, Rational64::from(from.row as i64) + half];
    let q = [Rational64::from(to.col as i64) + half, Rational64::from(to.row as i64) + half];
    let lo = [Rational64::from(cell.col as i64), Rational64::from(cell.row as i64)];
    // Parameters at which the point is strictly inside the square form an
    // open interval; intersected with [0, 1] it is nonempty iff t0 < t1.
    let mut t0 = Rational64::from(0);
    let mut t1 = Rational64::from(1);
    for axis in 0..2 {
        let d = q[axis] - p[axis];
        let (a, b) = (lo[axis], lo[axis] + 1);
        if d == Rational64::from(0) {
            if !(p[axis] > a && p[axis] < b) {
                return false;
            }
            continue;
        }
        let (mut s0, mut s1) = ((a - p[axis]) / d, (b - p[axis]) / d);
        if s0 > s1 {
            std::mem::swap(&mut s0, &mut s1);
        }
        t0 = t0.max(s0);
        t1 = t1.min(s1);
    }
    t0 < t1
}

/// Line of sight by testing every building in the bounding box.
pub fn los_oracle(map: &GridMap, from: Cell, to: Cell) -> bool {
    for row in from.row.min(to.row)..=from.row.max(to.row) {
        for col in from.col.min(to.col)..=from.col.max(to.col) {
            let c = Cell::new(col, row);
            if c == from || c == to || map.kind(c) != CellKind::Building {
                continue;
            }
            if segment_crosses_interior(from, to, c) {
                return false;
            }
        }
    }
    true
}

/// Overhead view by scanning the whole map.
pub fn hlp_fov_oracle(map: &GridMap, position: Cell, radius: i32) -> Vec<Cell> {
    map.cells().filter(|(c, k)| c.chebyshev(position) <= radius && *k != CellKind::Foliage).map(|(c, _)| c).collect()
}

/// Forward cone by angle: the offset makes an angle of at most 45 degrees
/// with the heading.
pub fn in_cone_by_angle(heading: Heading, dcol: i32, drow: i32) -> bool {
    if dcol == 0 && drow == 0 {
        return false;
    }
    let (hx, hy) = heading.delta();
    let dot = (hx * dcol + hy * drow) as f64;
    let norm = ((dcol * dcol + drow * drow) as f64).sqrt();
    dot / norm >= std::f64::consts::FRAC_1_SQRT_2 - 1e-12
}

/// Ground view by scanning the whole map with the angle and ray oracles.
pub fn ground_fov_oracle(map: &GridMap, position: Cell, heading: Heading, radius: i32) -> Vec<Cell> {
    map.cells()
        .map(|(c, _)| c)
        .filter(|c| {
            *c == position
                || (c.chebyshev(position) <= radius
                    && in_cone_by_angle(heading, c.col - position.col, c.row - position.row)
                    && los_oracle(map, position, *c))
        })
        .collect()
}

/// K=1 library of untrained policies, for tests that need a complete
/// library but not a good one.
pub fn untrained_library(seed: u64) -> LevelLibrary {
    let config = TrainConfig { seed, ..TrainConfig::default() };
    let entry = |policy: Policy| LibraryEntry {
        policy,
        provenance: Provenance { opponent: None, config_hash: "test".into(), seed: Some(seed), report: None },
    };
    LevelLibrary {
        k: 1,
        evaders: vec![entry(Policy::level0_evader()), entry(initial_policy(Scope::Evader, 1, &config))],
        pursuer_pairs: vec![
            entry(initial_policy(Scope::PursuerPair, 0, &config)),
            entry(initial_policy(Scope::PursuerPair, 1, &TrainConfig { seed: seed + 1, ..config.clone() })),
        ],
    }
}
