//! Fixed, non-strategic behaviours.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arena::Arena;
use crate::game::{valid_actions, Action, ActionSet};
use crate::map::Cell;
use crate::paths::{action_towards, astar};
use crate::policy::features::EvaderFeatures;
use crate::rng::SimRng;

pub const DEFAULT_EVADER_EPSILON: f64 = 0.1;
/// Extra cost of entering a cell next to a recently seen LLP.
pub const AVOIDANCE_COST: u32 = 8;
pub const AVOIDANCE_STALENESS: u32 = 2;
pub const AVOIDANCE_DISTANCE: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Heuristic {
    /// Level-0 evader: shortest path to the goal, random valid action with
    /// probability `epsilon`, detours around a recently seen LLP.
    AStarEvader { epsilon: f64 },
    /// Never moves.
    Stationary,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HeuristicError {
    #[error("no path from {from} to goal {goal}")]
    NoPathToGoal { from: Cell, goal: Cell },
}

/// Cells whose entry cost is inflated: the 3x3 block around an LLP seen
/// within the last two steps at Chebyshev distance three or less.
pub fn avoidance_cells(features: &EvaderFeatures) -> Vec<Cell> {
    match features.last_known_llp {
        Some(l)
            if features.llp_staleness <= AVOIDANCE_STALENESS
                && l.chebyshev(features.me.position) <= AVOIDANCE_DISTANCE =>
        {
            (-1..=1).flat_map(|dr| (-1..=1).map(move |dc| l.offset(dc, dr))).collect()
        }
        _ => Vec::new(),
    }
}

pub fn evader_level0_act(
    features: &EvaderFeatures,
    arena: &Arena,
    epsilon: f64,
    rng: &mut SimRng,
) -> Result<Action, HeuristicError> {
    let valid = valid_actions(arena.map(), &features.me);
    // The exploration draw happens every step so the stream stays aligned.
    let explore = rng.gen::<f64>() < epsilon;
    if explore {
        return Ok(uniform_valid(valid, rng));
    }
    let from = features.me.position;
    let inflated = avoidance_cells(features);
    let (path, _) = astar(arena.map(), from, features.goal, |c| {
        if inflated.contains(&c) {
            AVOIDANCE_COST
        } else {
            0
        }
    })
    .ok_or(HeuristicError::NoPathToGoal { from, goal: features.goal })?;
    Ok(path.get(1).map_or(Action::Stay, |next| action_towards(from, *next)))
}

pub fn uniform_valid(valid: ActionSet, rng: &mut SimRng) -> Action {
    valid.nth(rng.gen_range(0..valid.len())).unwrap_or(Action::Stay)
}
