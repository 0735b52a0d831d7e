//! Best-response learning against fixed opponents: episodic SARSA(lambda)
//! with linear action-value functions and epsilon-greedy exploration.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::arena::Arena;
use crate::game::{Action, ActionSet, JointAction, Role};
use crate::policy::{greedy, BeliefFeatures, LinearTable, Policy, PolicyKind, Scope};
use crate::rng::{child_rng, derive_seed, SimRng};
use crate::training::rollout::{rollout, Episode, LogIdentity, Recording, RewardSpec, RolloutError};
use crate::training::scenario::{SamplerSpec, Scenario, ScenarioError};

const STREAM_INIT: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_VALIDATE: u64 = 3;
const STREAM_EVALUATE: u64 = 4;
const STREAM_EXPLORE: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: u32,
    pub episodes_per_iteration: u32,
    pub learning_rate: f64,
    pub discount: f64,
    pub trace_decay: f64,
    /// Exploration rate at the first iteration, decayed linearly to
    /// `epsilon_end` at the last.
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Greedy episodes scored after every iteration to pick the best snapshot.
    pub validation_episodes: u32,
    /// Fresh greedy episodes for the final improvement test.
    pub evaluation_episodes: u32,
    /// Half-width of the uniform distribution of initial weights.
    pub init_scale: f64,
    pub seed: u64,
    pub sampler: SamplerSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 30,
            episodes_per_iteration: 3000,
            learning_rate: 0.002,
            discount: 0.99,
            trace_decay: 0.9,
            epsilon_start: 0.3,
            epsilon_end: 0.05,
            validation_episodes: 200,
            evaluation_episodes: 200,
            init_scale: 2.0,
            seed: 0,
            sampler: SamplerSpec::default(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid training config: {0}")]
    Invalid(String),
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.episodes_per_iteration == 0 || self.validation_episodes == 0 || self.evaluation_episodes < 2 {
            return bad("episode counts must be positive (evaluation needs at least 2)");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("exploration rates must lie in [0, 1]");
        }
        if self.epsilon_end > self.epsilon_start {
            return bad("exploration must be nonincreasing");
        }
        if !(self.learning_rate > 0.0) || !(0.0..=1.0).contains(&self.discount) || !(0.0..=1.0).contains(&self.trace_decay) {
            return bad("learning rate must be positive; discount and trace decay in [0, 1]");
        }
        Ok(())
    }

    pub fn epsilon(&self, iteration: u32) -> f64 {
        if self.iterations <= 1 {
            return self.epsilon_start;
        }
        let frac = iteration as f64 / (self.iterations - 1) as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no significant improvement: initial return {initial:.3}, final {trained:.3}, p = {p_value:.4}")]
    NoImprovement { policy: Box<Policy>, initial: f64, trained: f64, p_value: f64 },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("opponent scope {0:?} cannot face a learner of the same scope")]
    ScopeClash(Scope),
}

/// Summary of one `optimize_policy` call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_return: f64,
    pub trained_return: f64,
    pub p_value: f64,
    pub trained_win_rate: f64,
    pub best_iteration: Option<u32>,
    /// Mean greedy validation return after each iteration.
    pub validation_curve: Vec<f64>,
}

/// Which side wins in a learner-side sense.
fn learner_won(scope: Scope, status: crate::game::Status) -> bool {
    match scope {
        Scope::PursuerPair => status.pursuers_won(),
        Scope::Evader => status.is_terminal() && !status.pursuers_won(),
    }
}

pub fn initial_policy(scope: Scope, level: u32, config: &TrainConfig) -> Policy {
    let mut policy = Policy::zeros(scope, level);
    let mut rng = child_rng(config.seed, &[STREAM_INIT]);
    if let PolicyKind::Trained { tables } = &mut policy.kind {
        for t in tables {
            for w in &mut t.weights {
                *w = rng.gen_range(-config.init_scale..=config.init_scale);
            }
        }
    }
    policy
}

pub fn scenario_for(arena: &Arena, sampler: &SamplerSpec, seed: u64) -> Result<Scenario, ScenarioError> {
    sampler.sample(arena, &mut child_rng(seed, &[0xC0FFEE]))
}

/// Greedy returns (for `scope`) and wins over the given episode seeds.
pub fn evaluate(
    arena: &Arena,
    scope: Scope,
    learner: &Policy,
    opponent: &Policy,
    reward: RewardSpec,
    sampler: &SamplerSpec,
    seeds: &[u64],
) -> Result<Vec<(f64, bool)>, TrainError> {
    seeds
        .par_iter()
        .map(|&seed| {
            let scenario = scenario_for(arena, sampler, seed)?;
            let (p, e) = match scope {
                Scope::PursuerPair => (learner, opponent),
                Scope::Evader => (opponent, learner),
            };
            let out = rollout(arena, p, e, &scenario, seed, reward, Recording::NONE, "")?;
            let ret = match scope {
                Scope::PursuerPair => out.pursuer_return,
                Scope::Evader => out.evader_return,
            };
            Ok((ret, learner_won(scope, out.status)))
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// One-sided paired t-test p-value for `mean(after - before) > 0`.
pub fn paired_improvement_p(before: &[f64], after: &[f64]) -> f64 {
    let d: Vec<f64> = after.iter().zip(before).map(|(a, b)| a - b).collect();
    let n = d.len() as f64;
    let m = mean(&d);
    let var = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return if m > 0.0 { 0.0 } else { 1.0 };
    }
    let t = m / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("valid degrees of freedom");
    1.0 - dist.cdf(t)
}

struct Traces {
    tables: Vec<LinearTable>,
}

impl Traces {
    fn new(policy: &Policy) -> Self {
        let PolicyKind::Trained { tables } = &policy.kind else { unreachable!("learner policies are trained") };
        Self {
            tables: tables.iter().map(|t| LinearTable::zeros(t.contexts, t.features)).collect(),
        }
    }
}

/// Per-role (context, feature vector) of the action taken.
type Taken = Vec<(usize, Vec<f64>)>;

fn role_phi(features: &BeliefFeatures, role: Role, action: Action) -> (usize, Vec<f64>) {
    match (features, role) {
        (BeliefFeatures::Pursuer(f), Role::Hlp) => (f.context, f.hlp_phi[action.index()].to_vec()),
        (BeliefFeatures::Pursuer(f), Role::Llp) => (f.context, f.llp_phi[action.index()].to_vec()),
        (BeliefFeatures::Evader(f), _) => (f.context, f.phi[action.index()].to_vec()),
        _ => unreachable!("feature side matches role"),
    }
}

fn epsilon_greedy(policy: &Policy, role: Role, features: &BeliefFeatures, valid: ActionSet, eps: f64, rng: &mut SimRng) -> Action {
    if rng.gen::<f64>() < eps {
        valid.nth(rng.gen_range(0..valid.len())).unwrap_or(Action::Stay)
    } else {
        greedy(&policy.scores(role, features).unwrap_or([0.0; 5]), valid)
    }
}

/// Runs one exploratory training episode, updating `policy` in place.
fn train_episode(
    arena: &Arena,
    policy: &mut Policy,
    opponent: &Policy,
    reward: RewardSpec,
    config: &TrainConfig,
    scenario: &Scenario,
    seed: u64,
    eps: f64,
) -> Result<(), TrainError> {
    let scope = policy.scope;
    let roles = scope.roles();
    let mut explore = child_rng(seed, &[STREAM_EXPLORE]);
    let mut ep = Episode::new(arena, scenario, seed, reward, Recording::NONE, LogIdentity::default())?;
    let mut traces = Traces::new(policy);
    let (gamma, lambda, alpha) = (config.discount, config.trace_decay, config.learning_rate);

    let learner_features = |ep: &Episode| -> Result<BeliefFeatures, RolloutError> {
        Ok(match scope {
            Scope::PursuerPair => BeliefFeatures::Pursuer(ep.pursuer_features()?),
            Scope::Evader => BeliefFeatures::Evader(ep.evader_features()?),
        })
    };
    let mut feats = learner_features(&ep)?;
    let mut actions: Vec<Action> =
        roles.iter().map(|r| epsilon_greedy(policy, *r, &feats, ep.valid(*r), eps, &mut explore)).collect();

    while ep.is_running() {
        let arena_c = ep.arena().clone();
        let joint = match scope {
            Scope::PursuerPair => {
                let ef = BeliefFeatures::Evader(ep.evader_features().map_err(RolloutError::from)?);
                let ve = ep.valid(Role::Evader);
                let ev = opponent.act(Role::Evader, &ef, ve, &arena_c, &mut ep.rngs.evader).map_err(RolloutError::from)?;
                JointAction::new(actions[0], actions[1], ev)
            }
            Scope::Evader => {
                let pf = BeliefFeatures::Pursuer(ep.pursuer_features().map_err(RolloutError::from)?);
                let (vh, vl) = (ep.valid(Role::Hlp), ep.valid(Role::Llp));
                let h = opponent.act(Role::Hlp, &pf, vh, &arena_c, &mut ep.rngs.hlp).map_err(RolloutError::from)?;
                let l = opponent.act(Role::Llp, &pf, vl, &arena_c, &mut ep.rngs.llp).map_err(RolloutError::from)?;
                JointAction::new(h, l, actions[0])
            }
        };
        let taken: Taken = roles.iter().zip(&actions).map(|(r, a)| role_phi(&feats, *r, *a)).collect();
        let r = ep.advance(joint, None)?;
        let reward_here = match scope {
            Scope::PursuerPair => r.pursuer,
            Scope::Evader => r.evader,
        };
        let (next_feats, next_actions) = if ep.is_running() {
            let nf = learner_features(&ep)?;
            let na: Vec<Action> =
                roles.iter().map(|r| epsilon_greedy(policy, *r, &nf, ep.valid(*r), eps, &mut explore)).collect();
            (Some(nf), na)
        } else {
            (None, actions.clone())
        };
        for (i, role) in roles.iter().enumerate() {
            let (ctx, phi) = &taken[i];
            let table = policy.table(*role).expect("trained table");
            let q = table.score(*ctx, phi);
            let q_next = match &next_feats {
                Some(nf) => policy.scores(*role, nf).map_or(0.0, |s| s[next_actions[i].index()]),
                None => 0.0,
            };
            let delta = reward_here + gamma * q_next - q;
            let trace = &mut traces.tables[i];
            for e in &mut trace.weights {
                *e *= gamma * lambda;
            }
            for (e, x) in trace.row_mut(*ctx).iter_mut().zip(phi) {
                *e += x;
            }
            let table = policy.table_mut(*role).expect("trained table");
            for (w, e) in table.weights.iter_mut().zip(&trace.weights) {
                *w += alpha * delta * e;
            }
        }
        if let Some(nf) = next_feats {
            feats = nf;
            actions = next_actions;
        }
    }
    Ok(())
}

fn blend(into: &mut Policy, from: &Policy, w: f64) {
    let (PolicyKind::Trained { tables: a }, PolicyKind::Trained { tables: b }) = (&mut into.kind, &from.kind) else {
        return;
    };
    for (ta, tb) in a.iter_mut().zip(b) {
        for (x, y) in ta.weights.iter_mut().zip(&tb.weights) {
            *x += w * (y - *x);
        }
    }
}

/// Trains a best response of `scope` against the fixed `opponent`.
///
/// Starts from uniform random weights, keeps the snapshot with the best
/// greedy validation return, and accepts it only if its mean return on fresh
/// evaluation episodes beats the initial policy with one-sided p < 0.05.
pub fn optimize_policy(
    arena: &Arena,
    scope: Scope,
    level: u32,
    opponent: &Policy,
    reward: RewardSpec,
    config: &TrainConfig,
) -> Result<(Policy, TrainReport), TrainError> {
    config.validate()?;
    if opponent.scope == scope {
        return Err(TrainError::ScopeClash(scope));
    }
    let initial = initial_policy(scope, level, config);
    let validation_seeds: Vec<u64> =
        (0..config.validation_episodes as u64).map(|i| derive_seed(config.seed, &[STREAM_VALIDATE, i])).collect();
    let evaluation_seeds: Vec<u64> =
        (0..config.evaluation_episodes as u64).map(|i| derive_seed(config.seed, &[STREAM_EVALUATE, i])).collect();

    let mut policy = initial.clone();
    let mut best = initial.clone();
    let mut best_score = f64::NEG_INFINITY;
    let mut best_iteration = None;
    let mut curve = Vec::with_capacity(config.iterations as usize);
    for it in 0..config.iterations {
        let eps = config.epsilon(it);
        // Candidates are the running average of the iterate over the
        // iteration, which is far less noisy than the last iterate.
        let mut averaged = policy.clone();
        for e in 0..config.episodes_per_iteration as u64 {
            let seed = derive_seed(config.seed, &[STREAM_TRAIN, it as u64, e]);
            let scenario = scenario_for(arena, &config.sampler, seed)?;
            train_episode(arena, &mut policy, opponent, reward, config, &scenario, seed, eps)?;
            blend(&mut averaged, &policy, 1.0 / (e + 2) as f64);
        }
        let val = evaluate(arena, scope, &averaged, opponent, reward, &config.sampler, &validation_seeds)?;
        let score = mean(&val.iter().map(|v| v.0).collect::<Vec<_>>());
        curve.push(score);
        if score > best_score {
            best_score = score;
            best = averaged.clone();
            best_iteration = Some(it);
        }
    }

    let before = evaluate(arena, scope, &initial, opponent, reward, &config.sampler, &evaluation_seeds)?;
    let after = evaluate(arena, scope, &best, opponent, reward, &config.sampler, &evaluation_seeds)?;
    let b: Vec<f64> = before.iter().map(|x| x.0).collect();
    let a: Vec<f64> = after.iter().map(|x| x.0).collect();
    let p_value = paired_improvement_p(&b, &a);
    let report = TrainReport {
        initial_return: mean(&b),
        trained_return: mean(&a),
        p_value,
        trained_win_rate: after.iter().filter(|x| x.1).count() as f64 / after.len() as f64,
        best_iteration,
        validation_curve: curve,
    };
    if config.iterations == 0 || !(p_value < 0.05 && report.trained_return >= report.initial_return) {
        return Err(TrainError::NoImprovement {
            policy: Box::new(best),
            initial: report.initial_return,
            trained: report.trained_return,
            p_value,
        });
    }
    Ok((best, report))
}
