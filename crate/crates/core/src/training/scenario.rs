//! Start/goal placement.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arena::Arena;
use crate::game::{AgentState, EpisodeState, GameError, Heading, Role};
use crate::map::Cell;
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub hlp_start: Cell,
    pub llp_start: Cell,
    pub evader_start: Cell,
    pub evader_goal: Cell,
    pub evader_heading: Heading,
}

impl Scenario {
    /// Pursuers start facing east, into the map from their western spawn.
    pub fn initial_state(&self, arena: &Arena) -> Result<EpisodeState, GameError> {
        EpisodeState::new(
            arena.map(),
            AgentState::new(Role::Hlp, self.hlp_start, Heading::E),
            AgentState::new(Role::Llp, self.llp_start, Heading::E),
            AgentState::new(Role::Evader, self.evader_start, self.evader_heading),
            self.evader_goal,
            arena.horizon,
        )
    }
}

/// Random placement rule. Pursuers spawn uniformly on the western edge (the
/// LLP on its accessible cells); evader start and goal are uniform over
/// accessible cells with a minimum Chebyshev separation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    /// Minimum start-goal Chebyshev distance; `None` means half the map width
    /// rounded up.
    pub min_goal_separation: Option<i32>,
    /// Minimum Chebyshev distance from the LLP spawn to the evader's start
    /// and goal.
    pub min_llp_clearance: i32,
    /// When set, every episode uses this placement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed: Option<Scenario>,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self { min_goal_separation: None, min_llp_clearance: 2, fixed: None }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("no accessible cell on the western edge for the LLP")]
    NoPursuerSpawn,
    #[error("could not place evader start and goal under the sampler constraints")]
    NoEvaderPlacement,
    #[error(transparent)]
    Game(#[from] GameError),
}

const MAX_DRAWS: usize = 10_000;

impl SamplerSpec {
    pub fn goal_separation(&self, arena: &Arena) -> i32 {
        self.min_goal_separation.unwrap_or((arena.map().width() as i32 + 1) / 2)
    }

    pub fn sample(&self, arena: &Arena, rng: &mut SimRng) -> Result<Scenario, ScenarioError> {
        if let Some(fixed) = self.fixed {
            return Ok(fixed);
        }
        let map = arena.map();
        let edge: Vec<Cell> = (0..map.height() as i32).map(|r| Cell::new(0, r)).collect();
        let llp_edge: Vec<Cell> = edge.iter().copied().filter(|c| map.is_accessible(*c)).collect();
        if llp_edge.is_empty() {
            return Err(ScenarioError::NoPursuerSpawn);
        }
        let hlp_start = edge[rng.gen_range(0..edge.len())];
        let llp_start = llp_edge[rng.gen_range(0..llp_edge.len())];
        let cells: Vec<Cell> = map
            .accessible_cells()
            .filter(|c| c.chebyshev(llp_start) >= self.min_llp_clearance)
            .collect();
        if cells.len() < 2 {
            return Err(ScenarioError::NoEvaderPlacement);
        }
        let sep = self.goal_separation(arena);
        for _ in 0..MAX_DRAWS {
            let start = cells[rng.gen_range(0..cells.len())];
            let goal = cells[rng.gen_range(0..cells.len())];
            if start != goal && start.chebyshev(goal) >= sep {
                let heading = [Heading::N, Heading::S, Heading::E, Heading::W][rng.gen_range(0..4)];
                return Ok(Scenario { hlp_start, llp_start, evader_start: start, evader_goal: goal, evader_heading: heading });
            }
        }
        Err(ScenarioError::NoEvaderPlacement)
    }
}
