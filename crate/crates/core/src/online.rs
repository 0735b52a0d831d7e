//! Online phase: classify the evader every step and deploy the pursuer pair
//! trained against the predicted level.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arena::Arena;
use crate::classifier::{argmax, classify, ClassifierError, ClassifierModel};
use crate::game::Role;
use crate::log::{EpisodeLog, OnlineStep};
use crate::policy::{BeliefFeatures, Policy};
use crate::training::library::LevelLibrary;
use crate::training::rollout::{Episode, EpisodeOutcome, LogIdentity, Recording, RewardSpec, RolloutError};
use crate::training::learner::scenario_for;
use crate::training::scenario::{SamplerSpec, Scenario, ScenarioError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    /// Minimum probability of the predicted level before switching to it.
    pub theta: f64,
    /// Minimum number of steps between switches.
    pub dwell: u32,
    pub initial_level: u32,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self { theta: 0.7, dwell: 5, initial_level: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub config: ControllerConfig,
    pub deployed: u32,
    pub steps_since_switch: u32,
    pub switches: u32,
    pub trace: Vec<Vec<f64>>,
}

impl ControllerState {
    pub fn new(config: ControllerConfig) -> Self {
        Self { config, deployed: config.initial_level, steps_since_switch: 0, switches: 0, trace: Vec::new() }
    }
}

/// Applies the switching rule for one step and returns the deployed level
/// and whether it changed. Ties in `probs` go to the lower level.
pub fn select_policies(ctrl: &mut ControllerState, probs: &[f64]) -> (u32, bool) {
    let m = argmax(probs) as u32;
    let switched = m != ctrl.deployed
        && probs[m as usize] >= ctrl.config.theta
        && ctrl.steps_since_switch >= ctrl.config.dwell;
    if switched {
        ctrl.deployed = m;
        ctrl.switches += 1;
        ctrl.steps_since_switch = 0;
    }
    ctrl.steps_since_switch += 1;
    ctrl.trace.push(probs.to_vec());
    (ctrl.deployed, switched)
}

#[derive(Debug, Error)]
pub enum OnlineError {
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("model has {model} classes but the library has {library} levels")]
    LevelCountMismatch { model: usize, library: u32 },
    #[error("initial level {0} is not in the library")]
    BadInitialLevel(u32),
}

/// Plays one episode with the online controller choosing the pursuer pair.
/// The log header names the initially deployed pair; every step record
/// carries the classifier output and the deployed level.
pub fn run_online_episode(
    arena: &Arena,
    library: &LevelLibrary,
    model: &ClassifierModel,
    evader: &Policy,
    scenario: &Scenario,
    seed: u64,
    reward: RewardSpec,
    config: ControllerConfig,
    config_hash: &str,
) -> Result<(EpisodeOutcome, ControllerState), OnlineError> {
    model.check_schema()?;
    if model.classes != library.levels() as usize {
        return Err(OnlineError::LevelCountMismatch { model: model.classes, library: library.levels() });
    }
    let initial = library.pursuers(config.initial_level).ok_or(OnlineError::BadInitialLevel(config.initial_level))?;
    let identity =
        LogIdentity { config_hash: config_hash.to_string(), pursuers: initial.identity(), evader: evader.identity() };
    let mut ep = Episode::new(arena, scenario, seed, reward, Recording::ALL, identity)?;
    let mut ctrl = ControllerState::new(config);
    let (mut pr, mut er) = (0.0, 0.0);
    while ep.is_running() {
        let history = ep.team_history().expect("history recorded");
        let probs = classify(model, history, arena, ep.state().t)?;
        let (level, switched) = select_policies(&mut ctrl, &probs);
        let pursuers = library.pursuers(level).expect("level within library");
        let joint = {
            let pf = BeliefFeatures::Pursuer(ep.pursuer_features().map_err(RolloutError::from)?);
            let ef = BeliefFeatures::Evader(ep.evader_features().map_err(RolloutError::from)?);
            let (vh, vl, ve) = (ep.valid(Role::Hlp), ep.valid(Role::Llp), ep.valid(Role::Evader));
            let arena = ep.arena().clone();
            let h = pursuers.act(Role::Hlp, &pf, vh, &arena, &mut ep.rngs.hlp).map_err(RolloutError::from)?;
            let l = pursuers.act(Role::Llp, &pf, vl, &arena, &mut ep.rngs.llp).map_err(RolloutError::from)?;
            let e = evader.act(Role::Evader, &ef, ve, &arena, &mut ep.rngs.evader).map_err(RolloutError::from)?;
            crate::game::JointAction::new(h, l, e)
        };
        let r = ep.advance(joint, Some(OnlineStep { probs, deployed_level: level, switched }))?;
        pr += r.pursuer;
        er += r.evader;
    }
    Ok((ep.finish(pr, er), ctrl))
}

/// Online episodes over the given seeds, with scenarios drawn exactly as
/// for fixed-policy evaluation. Returns each log with its final controller
/// state.
pub fn play_online_logs(
    arena: &Arena,
    library: &LevelLibrary,
    model: &ClassifierModel,
    evader: &Policy,
    sampler: &SamplerSpec,
    reward: RewardSpec,
    seeds: &[u64],
    config: ControllerConfig,
    config_hash: &str,
) -> Result<Vec<(EpisodeLog, ControllerState)>, OnlineError> {
    seeds
        .par_iter()
        .map(|&seed| {
            let scenario = scenario_for(arena, sampler, seed)?;
            let (out, ctrl) =
                run_online_episode(arena, library, model, evader, &scenario, seed, reward, config, config_hash)?;
            Ok((out.log.expect("log recorded"), ctrl))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(theta: f64, dwell: u32) -> ControllerState {
        ControllerState::new(ControllerConfig { theta, dwell, initial_level: 0 })
    }

    #[test]
    fn switching_rule_examples() {
        let mut c = state(0.7, 0);
        assert_eq!(select_policies(&mut c, &[0.9, 0.1]), (0, false));
        assert_eq!(select_policies(&mut c, &[0.4, 0.6]), (0, false));
        assert_eq!(select_policies(&mut c, &[0.2, 0.8]), (1, true));
        assert_eq!(c.switches, 1);
    }

    #[test]
    fn dwell_delays_switch() {
        let mut c = state(0.7, 5);
        for t in 0..5 {
            assert_eq!(select_policies(&mut c, &[0.0, 1.0]), (0, false), "t={t}");
        }
        assert_eq!(select_policies(&mut c, &[0.0, 1.0]), (1, true));
        // Straight back is blocked for another D steps.
        for _ in 0..4 {
            assert_eq!(select_policies(&mut c, &[1.0, 0.0]).1, false);
        }
        assert_eq!(select_policies(&mut c, &[1.0, 0.0]), (0, true));
    }

    #[test]
    fn ties_prefer_lower_level() {
        let mut c = state(0.5, 0);
        c.deployed = 2;
        assert_eq!(select_policies(&mut c, &[0.0, 0.5, 0.5]), (1, true));
    }
}
