//! Policies map history summaries to actions.

pub mod features;
pub mod heuristic;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arena::Arena;
use crate::game::{Action, ActionSet, Role};
use crate::rng::SimRng;

pub use features::{
    feature_schema_hash, summarize_evader_history, summarize_team_history, BeliefFeatures, EvaderFeatures,
    EvaderTracker, FeatureError, PursuerFeatures, PursuerTracker,
};
pub use heuristic::{evader_level0_act, Heuristic, HeuristicError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scope {
    PursuerPair,
    Evader,
}

impl Scope {
    pub fn roles(self) -> &'static [Role] {
        match self {
            Scope::PursuerPair => &[Role::Hlp, Role::Llp],
            Scope::Evader => &[Role::Evader],
        }
    }
}

/// Context-switched linear action scorer: one weight row per context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearTable {
    pub contexts: usize,
    pub features: usize,
    pub weights: Vec<f64>,
}

impl LinearTable {
    pub fn zeros(contexts: usize, features: usize) -> Self {
        Self { contexts, features, weights: vec![0.0; contexts * features] }
    }

    pub fn row(&self, context: usize) -> &[f64] {
        &self.weights[context * self.features..(context + 1) * self.features]
    }

    pub fn row_mut(&mut self, context: usize) -> &mut [f64] {
        &mut self.weights[context * self.features..(context + 1) * self.features]
    }

    pub fn score(&self, context: usize, phi: &[f64]) -> f64 {
        self.row(context).iter().zip(phi).map(|(w, x)| w * x).sum()
    }

    pub fn for_role(role: Role) -> Self {
        match role {
            Role::Evader => Self::zeros(features::EVADER_CONTEXTS, features::EVADER_FEATURES),
            Role::Hlp | Role::Llp => Self::zeros(features::PURSUER_CONTEXTS, features::PURSUER_FEATURES),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicyKind {
    Heuristic(Heuristic),
    /// One table per role in scope order (HLP then LLP, or the evader).
    Trained { tables: Vec<LinearTable> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub scope: Scope,
    pub level: u32,
    pub kind: PolicyKind,
}

/// Action scores for every action in tie-break order.
pub type Scores = [f64; 5];

/// First action of `valid` with the maximal score; ties go to the earlier
/// action in N, S, E, W, Stay order.
pub fn greedy(scores: &Scores, valid: ActionSet) -> Action {
    let mut best: Option<(Action, f64)> = None;
    for a in valid.iter() {
        let s = scores[a.index()];
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((a, s));
        }
    }
    best.map_or(Action::Stay, |(a, _)| a)
}

impl Policy {
    pub fn level0_evader() -> Self {
        Self {
            scope: Scope::Evader,
            level: 0,
            kind: PolicyKind::Heuristic(Heuristic::AStarEvader { epsilon: heuristic::DEFAULT_EVADER_EPSILON }),
        }
    }

    pub fn stationary(scope: Scope) -> Self {
        Self { scope, level: 0, kind: PolicyKind::Heuristic(Heuristic::Stationary) }
    }

    pub fn zeros(scope: Scope, level: u32) -> Self {
        let tables = scope.roles().iter().map(|r| LinearTable::for_role(*r)).collect();
        Self { scope, level, kind: PolicyKind::Trained { tables } }
    }

    pub fn is_trained(&self) -> bool {
        matches!(self.kind, PolicyKind::Trained { .. })
    }

    pub fn table(&self, role: Role) -> Option<&LinearTable> {
        let PolicyKind::Trained { tables } = &self.kind else { return None };
        let i = self.scope.roles().iter().position(|r| *r == role)?;
        tables.get(i)
    }

    pub fn table_mut(&mut self, role: Role) -> Option<&mut LinearTable> {
        let i = self.scope.roles().iter().position(|r| *r == role)?;
        let PolicyKind::Trained { tables } = &mut self.kind else { return None };
        tables.get_mut(i)
    }

    /// Linear scores of every action for `role`; `None` for heuristics.
    pub fn scores(&self, role: Role, features: &BeliefFeatures) -> Option<Scores> {
        let table = self.table(role)?;
        let mut out = [0.0; 5];
        match (role, features) {
            (Role::Hlp, BeliefFeatures::Pursuer(f)) => {
                for (o, phi) in out.iter_mut().zip(&f.hlp_phi) {
                    *o = table.score(f.context, phi);
                }
            }
            (Role::Llp, BeliefFeatures::Pursuer(f)) => {
                for (o, phi) in out.iter_mut().zip(&f.llp_phi) {
                    *o = table.score(f.context, phi);
                }
            }
            (Role::Evader, BeliefFeatures::Evader(f)) => {
                for (o, phi) in out.iter_mut().zip(&f.phi) {
                    *o = table.score(f.context, phi);
                }
            }
            _ => return None,
        }
        Some(out)
    }

    /// Chooses an action for `role`. Trained policies act greedily; the
    /// returned action is always a member of `valid`.
    pub fn act(
        &self,
        role: Role,
        features: &BeliefFeatures,
        valid: ActionSet,
        arena: &Arena,
        rng: &mut SimRng,
    ) -> Result<Action, HeuristicError> {
        debug_assert!(self.scope.roles().contains(&role));
        let action = match &self.kind {
            PolicyKind::Heuristic(Heuristic::Stationary) => Action::Stay,
            PolicyKind::Heuristic(Heuristic::AStarEvader { epsilon }) => match features {
                BeliefFeatures::Evader(f) => evader_level0_act(f, arena, *epsilon, rng)?,
                BeliefFeatures::Pursuer(_) => Action::Stay,
            },
            PolicyKind::Trained { .. } => {
                let scores = self.scores(role, features).unwrap_or([0.0; 5]);
                greedy(&scores, valid)
            }
        };
        Ok(if valid.contains(action) { action } else { Action::Stay })
    }

    /// Short identity string: scope, level, kind and a parameter digest.
    pub fn identity(&self) -> String {
        let scope = match self.scope {
            Scope::PursuerPair => "pursuers",
            Scope::Evader => "evader",
        };
        let kind = match &self.kind {
            PolicyKind::Heuristic(Heuristic::AStarEvader { .. }) => "astar".to_string(),
            PolicyKind::Heuristic(Heuristic::Stationary) => "stationary".to_string(),
            PolicyKind::Trained { .. } => "trained".to_string(),
        };
        format!("{scope}/L{}/{kind}/{}", self.level, self.digest())
    }

    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("policy serialises");
        hex::encode(&Sha256::digest(&bytes)[..6])
    }
}
