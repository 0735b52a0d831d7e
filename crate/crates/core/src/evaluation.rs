//! Metrics over episode logs and the cross-play matrix.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arena::Arena;
use crate::game::Status;
use crate::log::EpisodeLog;
use crate::policy::Policy;
use crate::rng::derive_seed;
use crate::training::learner::scenario_for;
use crate::training::library::LevelLibrary;
use crate::training::rollout::{rollout, Recording, RewardSpec, RolloutError};
use crate::training::scenario::SamplerSpec;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no episode logs to aggregate")]
    EmptyLogSet,
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Scenario(#[from] crate::training::scenario::ScenarioError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub n_episodes: usize,
    pub pursuer_win_rate: f64,
    pub pursuer_win_ci95: f64,
    pub evader_seen_rate: f64,
    pub evader_seen_ci95: f64,
    /// Mean first-detection timestep over episodes with a detection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_seen_mean: Option<f64>,
    pub time_in_fov: f64,
}

/// Half-width of the 95% normal-approximation interval for a proportion.
pub fn ci95(p: f64, n: usize) -> f64 {
    1.959_963_984_540_054 * (p * (1.0 - p) / n as f64).sqrt()
}

pub fn compute_metrics(logs: &[EpisodeLog]) -> Result<MetricsReport, EvalError> {
    if logs.is_empty() {
        return Err(EvalError::EmptyLogSet);
    }
    let n = logs.len();
    let mut wins = 0usize;
    let mut seen = 0usize;
    let mut first_sum = 0.0;
    let mut fov_sum = 0.0;
    for log in logs {
        if log.footer.status == Status::PursuerWin {
            wins += 1;
        }
        let flags = log.team_detection_flags();
        if let Some(first) = flags.iter().position(|f| *f) {
            seen += 1;
            first_sum += first as f64;
        }
        let detected = flags.iter().filter(|f| **f).count() as f64;
        fov_sum += detected / flags.len() as f64;
    }
    let win = wins as f64 / n as f64;
    let seen_rate = seen as f64 / n as f64;
    Ok(MetricsReport {
        n_episodes: n,
        pursuer_win_rate: win,
        pursuer_win_ci95: ci95(win, n),
        evader_seen_rate: seen_rate,
        evader_seen_ci95: ci95(seen_rate, n),
        first_seen_mean: (seen > 0).then(|| first_sum / seen as f64),
        time_in_fov: fov_sum / n as f64,
    })
}

/// Episode seeds for one matrix cell. Every cell of a matrix shares the
/// same seeds, so cells differ only in the policies that play.
pub fn cell_seeds(master: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| derive_seed(master, &[0xE7A1, i])).collect()
}

/// Logs of `n` seeded episodes between fixed policies.
pub fn play_logs(
    arena: &Arena,
    pursuers: &Policy,
    evader: &Policy,
    sampler: &SamplerSpec,
    reward: RewardSpec,
    seeds: &[u64],
    config_hash: &str,
) -> Result<Vec<EpisodeLog>, EvalError> {
    seeds
        .par_iter()
        .map(|&seed| {
            let scenario = scenario_for(arena, sampler, seed)?;
            let out = rollout(arena, pursuers, evader, &scenario, seed, reward, Recording::LOG, config_hash)?;
            Ok(out.log.expect("log recorded"))
        })
        .collect()
}

/// Metrics of one pursuer source against one evader level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelMetrics {
    pub evader_level: u32,
    pub metrics: MetricsReport,
}

/// Metrics of a single pursuer source (a fixed level or the online
/// controller) against every evader level. The source itself is not part of
/// the document, so documents from different sources compare directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsDocument {
    pub config_hash: String,
    pub seed: u64,
    pub episodes_per_level: usize,
    pub rows: Vec<LevelMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellReport {
    /// Deployed pursuer level; `None` for the online controller.
    pub pursuer_level: Option<u32>,
    pub evader_level: u32,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossPlayReport {
    pub k: u32,
    pub seed: u64,
    pub episodes_per_cell: usize,
    pub cells: Vec<CellReport>,
}

impl CrossPlayReport {
    pub fn cell(&self, pursuer_level: Option<u32>, evader_level: u32) -> Option<&MetricsReport> {
        self.cells
            .iter()
            .find(|c| c.pursuer_level == pursuer_level && c.evader_level == evader_level)
            .map(|c| &c.metrics)
    }

    /// Aligned plain-text table, one row per cell.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<10} {:<8} {:>12} {:>12} {:>11} {:>12}\n",
            "pursuers", "evader", "pursuer_win", "evader_seen", "first_seen", "time_in_fov"
        );
        for c in &self.cells {
            let p = c.pursuer_level.map_or("online".to_string(), |l| format!("P{l}"));
            let m = &c.metrics;
            let first = m.first_seen_mean.map_or("-".to_string(), |f| format!("{f:.2}"));
            out.push_str(&format!(
                "{:<10} {:<8} {:>12} {:>12} {:>11} {:>12}\n",
                p,
                format!("E{}", c.evader_level),
                format!("{:.3}", m.pursuer_win_rate),
                format!("{:.3}", m.evader_seen_rate),
                first,
                format!("{:.3}", m.time_in_fov)
            ));
        }
        out
    }
}

/// Every pursuer level against every evader level over `n` episodes each.
/// `online` optionally supplies logs for an online column given an evader
/// level and the shared seeds.
pub fn cross_play(
    arena: &Arena,
    library: &LevelLibrary,
    sampler: &SamplerSpec,
    reward: RewardSpec,
    n: usize,
    seed: u64,
    online: Option<&dyn Fn(u32, &[u64]) -> Result<Vec<EpisodeLog>, EvalError>>,
) -> Result<CrossPlayReport, EvalError> {
    let seeds = cell_seeds(seed, n);
    let mut cells = Vec::new();
    for p in 0..library.levels() {
        for e in 0..library.levels() {
            let logs = play_logs(
                arena,
                library.pursuers(p).expect("complete library"),
                library.evader(e).expect("complete library"),
                sampler,
                reward,
                &seeds,
                "",
            )?;
            cells.push(CellReport { pursuer_level: Some(p), evader_level: e, metrics: compute_metrics(&logs)? });
        }
    }
    if let Some(run) = online {
        for e in 0..library.levels() {
            let logs = run(e, &seeds)?;
            cells.push(CellReport { pursuer_level: None, evader_level: e, metrics: compute_metrics(&logs)? });
        }
    }
    Ok(CrossPlayReport { k: library.k, seed, episodes_per_cell: n, cells })
}
