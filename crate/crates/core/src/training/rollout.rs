//! Step-by-step episode driver shared by offline rollouts, the learner and
//! the online controller.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arena::Arena;
use crate::game::{step, valid_actions, ActionSet, EpisodeState, GameError, JointAction, Role, Status};
use crate::log::{EpisodeLog, LogFooter, LogHeader, ObservationDigest, OnlineStep, Rewards, StepRecord, LOG_VERSION};
use crate::policy::{
    BeliefFeatures, EvaderFeatures, EvaderTracker, FeatureError, HeuristicError, Policy, PursuerFeatures,
    PursuerTracker,
};
use crate::rng::{child_rng, SimRng};
use crate::training::scenario::Scenario;
use crate::visibility::{make_observation, HistoryError, Observation, TeamHistory, TeamRecord};

/// Scalar reward weights. Pursuers and evader receive mirrored rewards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSpec {
    pub capture: f64,
    pub goal: f64,
    pub step_cost: f64,
    /// Per step with the evader in the team's view: bonus for the pursuers,
    /// penalty for the evader.
    pub detection: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self { capture: 10.0, goal: 10.0, step_cost: 0.01, detection: 0.05 }
    }
}

impl RewardSpec {
    /// Terminal rewards must outweigh the most shaping an episode can accrue.
    pub fn terminal_dominates(&self, horizon: u32) -> bool {
        (self.step_cost.abs() + self.detection.abs()) * f64::from(horizon) < self.capture.min(self.goal)
    }

    pub fn transition(&self, status: Status, team_sees_evader: bool) -> Rewards {
        let shaping = if team_sees_evader { self.detection } else { 0.0 };
        let mut pursuer = -self.step_cost + shaping;
        let mut evader = -self.step_cost - shaping;
        match status {
            Status::PursuerWin => {
                pursuer += self.capture;
                evader -= self.capture;
            }
            Status::EvaderWin => {
                pursuer -= self.goal;
                evader += self.goal;
            }
            Status::Timeout | Status::Running => {}
        }
        Rewards { pursuer, evader }
    }
}

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Heuristic(#[from] HeuristicError),
}

/// What to retain while an episode runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Recording {
    pub log: bool,
    pub team_history: bool,
}

impl Recording {
    pub const NONE: Recording = Recording { log: false, team_history: false };
    pub const LOG: Recording = Recording { log: true, team_history: false };
    pub const ALL: Recording = Recording { log: true, team_history: true };
}

/// Identity fields for the log header.
#[derive(Debug, Clone, Default)]
pub struct LogIdentity {
    pub config_hash: String,
    pub pursuers: String,
    pub evader: String,
}

/// Per-agent random streams derived from the episode seed.
pub struct AgentRngs {
    pub hlp: SimRng,
    pub llp: SimRng,
    pub evader: SimRng,
}

impl AgentRngs {
    pub fn new(seed: u64) -> Self {
        Self { hlp: child_rng(seed, &[0]), llp: child_rng(seed, &[1]), evader: child_rng(seed, &[2]) }
    }
}

pub struct Episode {
    arena: Arena,
    state: EpisodeState,
    observations: [Observation; 3],
    pursuer_tracker: PursuerTracker,
    evader_tracker: EvaderTracker,
    team_history: Option<TeamHistory>,
    reward: RewardSpec,
    pub rngs: AgentRngs,
    log: Option<(LogHeader, Vec<StepRecord>)>,
    last_rewards: Rewards,
}

/// Result of a finished episode.
#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub status: Status,
    pub final_t: u32,
    pub pursuer_return: f64,
    pub evader_return: f64,
    pub log: Option<EpisodeLog>,
    pub team_history: Option<TeamHistory>,
}

impl Episode {
    pub fn new(
        arena: &Arena,
        scenario: &Scenario,
        seed: u64,
        reward: RewardSpec,
        recording: Recording,
        identity: LogIdentity,
    ) -> Result<Self, RolloutError> {
        let state = scenario.initial_state(arena)?;
        let observations = observe_all(arena, &state);
        let mut ep = Self {
            arena: arena.clone(),
            pursuer_tracker: PursuerTracker::new(arena),
            evader_tracker: EvaderTracker::new(arena, scenario.evader_goal),
            team_history: recording.team_history.then(TeamHistory::new),
            reward,
            rngs: AgentRngs::new(seed),
            log: recording.log.then(|| {
                (
                    LogHeader {
                        version: LOG_VERSION,
                        config_hash: identity.config_hash,
                        seed,
                        map_hash: arena.map().hash_hex(),
                        pursuers: identity.pursuers,
                        evader: identity.evader,
                        scenario: *scenario,
                        horizon: arena.horizon,
                        fov: arena.fov,
                    },
                    Vec::new(),
                )
            }),
            state,
            observations,
            last_rewards: Rewards { pursuer: 0.0, evader: 0.0 },
        };
        ep.absorb_observations()?;
        Ok(ep)
    }

    fn absorb_observations(&mut self) -> Result<(), RolloutError> {
        let [h, l, e] = &self.observations;
        let rec = TeamRecord { t: h.t, hlp: h.clone(), llp: l.clone() };
        self.pursuer_tracker.update(&rec);
        if let Some(hist) = &mut self.team_history {
            hist.fuse(h.clone(), l.clone())?;
        }
        self.evader_tracker.update(e);
        Ok(())
    }

    pub fn arena(&self) -> &Arena {
        &self.arena
    }

    pub fn state(&self) -> &EpisodeState {
        &self.state
    }

    pub fn status(&self) -> Status {
        self.state.status
    }

    pub fn is_running(&self) -> bool {
        !self.state.status.is_terminal()
    }

    pub fn observations(&self) -> &[Observation; 3] {
        &self.observations
    }

    /// Team record for the current timestep.
    pub fn team_record(&self) -> TeamRecord {
        TeamRecord { t: self.state.t, hlp: self.observations[0].clone(), llp: self.observations[1].clone() }
    }

    /// Fused team history, when recorded.
    pub fn team_history(&self) -> Option<&TeamHistory> {
        self.team_history.as_ref()
    }

    pub fn team_sees_evader(&self) -> bool {
        self.observations[0].detected(Role::Evader).is_some() || self.observations[1].detected(Role::Evader).is_some()
    }

    pub fn pursuer_features(&self) -> Result<PursuerFeatures, FeatureError> {
        self.pursuer_tracker.features()
    }

    pub fn evader_features(&self) -> Result<EvaderFeatures, FeatureError> {
        self.evader_tracker.features()
    }

    pub fn valid(&self, role: Role) -> ActionSet {
        valid_actions(self.arena.map(), self.state.agent(role))
    }

    pub fn last_rewards(&self) -> Rewards {
        self.last_rewards
    }

    /// Applies a joint action, observes the new state and returns the
    /// transition rewards.
    pub fn advance(&mut self, action: JointAction, online: Option<OnlineStep>) -> Result<Rewards, RolloutError> {
        let next = step(self.arena.map(), &self.state, &action)?;
        let next_obs = observe_all(&self.arena, &next);
        let sees = next_obs[0].detected(Role::Evader).is_some() || next_obs[1].detected(Role::Evader).is_some();
        let rewards = self.reward.transition(next.status, sees);
        if let Some((_, steps)) = &mut self.log {
            steps.push(StepRecord {
                t: self.state.t,
                hlp: self.state.hlp,
                llp: self.state.llp,
                evader: self.state.evader,
                actions: action,
                observations: self.observations.iter().map(ObservationDigest::from).collect(),
                rewards,
                online,
            });
        }
        self.state = next;
        self.observations = next_obs;
        self.absorb_observations()?;
        self.last_rewards = rewards;
        Ok(rewards)
    }

    pub fn finish(self, pursuer_return: f64, evader_return: f64) -> EpisodeOutcome {
        let log = self.log.map(|(header, steps)| EpisodeLog {
            header,
            steps,
            footer: LogFooter {
                status: self.state.status,
                final_t: self.state.t,
                hlp: self.state.hlp,
                llp: self.state.llp,
                evader: self.state.evader,
                observations: self.observations.iter().map(ObservationDigest::from).collect(),
            },
        });
        EpisodeOutcome {
            status: self.state.status,
            final_t: self.state.t,
            pursuer_return,
            evader_return,
            log,
            team_history: self.team_history,
        }
    }
}

fn observe_all(arena: &Arena, state: &EpisodeState) -> [Observation; 3] {
    [Role::Hlp, Role::Llp, Role::Evader].map(|r| make_observation(arena.map(), state, r, arena.fov))
}

/// Plays a full episode with fixed policies.
pub fn rollout(
    arena: &Arena,
    pursuers: &Policy,
    evader: &Policy,
    scenario: &Scenario,
    seed: u64,
    reward: RewardSpec,
    recording: Recording,
    config_hash: &str,
) -> Result<EpisodeOutcome, RolloutError> {
    let identity =
        LogIdentity { config_hash: config_hash.to_string(), pursuers: pursuers.identity(), evader: evader.identity() };
    let mut ep = Episode::new(arena, scenario, seed, reward, recording, identity)?;
    let (mut pr, mut er) = (0.0, 0.0);
    while ep.is_running() {
        let joint = policy_joint_action(&mut ep, pursuers, evader)?;
        let r = ep.advance(joint, None)?;
        pr += r.pursuer;
        er += r.evader;
    }
    Ok(ep.finish(pr, er))
}

/// Joint action of fixed pursuer and evader policies in the current state.
pub fn policy_joint_action(ep: &mut Episode, pursuers: &Policy, evader: &Policy) -> Result<JointAction, RolloutError> {
    let pf = BeliefFeatures::Pursuer(ep.pursuer_features()?);
    let ef = BeliefFeatures::Evader(ep.evader_features()?);
    let (vh, vl, ve) = (ep.valid(Role::Hlp), ep.valid(Role::Llp), ep.valid(Role::Evader));
    let arena = ep.arena.clone();
    let hlp = pursuers.act(Role::Hlp, &pf, vh, &arena, &mut ep.rngs.hlp)?;
    let llp = pursuers.act(Role::Llp, &pf, vl, &arena, &mut ep.rngs.llp)?;
    let ev = evader.act(Role::Evader, &ef, ve, &arena, &mut ep.rngs.evader)?;
    Ok(JointAction::new(hlp, llp, ev))
}
