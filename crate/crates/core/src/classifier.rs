//! Opponent-level classifier: multinomial logistic regression over summary
//! statistics of the pursuer team's observation history.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::arena::Arena;
use crate::game::Role;
use crate::log::{EpisodeLog, ObservationDigest};
use crate::map::{Cell, CellKind};
use crate::policy::features::open_exposure;
use crate::rng::{child_rng, derive_seed};
use crate::training::learner::scenario_for;
use crate::training::library::LevelLibrary;
use crate::training::rollout::{rollout, Recording, RewardSpec, RolloutError};
use crate::training::scenario::{SamplerSpec, ScenarioError};
use crate::visibility::{make_observation, TeamHistory, TeamRecord};

/// Window length, in timesteps, of the recent-evidence features.
pub const WINDOW: u32 = 8;
pub const CLASSIFIER_FEATURES: usize = 25;
pub const MODEL_VERSION: u32 = 1;

/// Value of detection-derived features when there is nothing to summarise.
pub const SENTINEL: f64 = -1.0;

pub const LEARNING_RATE: f64 = 0.1;
pub const L2: f64 = 1e-4;
pub const EPOCHS: usize = 500;
pub const TRAIN_FRACTION: f64 = 0.8;

pub fn classifier_schema_hash() -> String {
    let desc = format!(
        "window={WINDOW};features={CLASSIFIER_FEATURES}[win_rate,win_any,win_disp_mean,win_disp_var,win_staleness,\
         win_foliage,win_dist,never_seen,cum_rate,first_seen,cum_disp,cum_still,cum_foliage,cum_dist,time,time2,\
         net_disp,mean_col,mean_row,staleness,net_speed,exposure,llp_drift,geo_speed,unseen_time];sentinel=-1"
    );
    hex::encode(&Sha256::digest(desc.as_bytes())[..8])
}

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("dataset has fewer than two classes in its training split")]
    DegenerateDataset,
    #[error("feature schema mismatch: model {model}, runtime {runtime}")]
    SchemaMismatch { model: String, runtime: String },
    #[error("timestep {t} is beyond the history (last {last:?})")]
    BeyondHistory { t: u32, last: Option<u32> },
    #[error("log step {t} does not match the re-simulated observation of {observer}")]
    LogMismatch { t: u32, observer: Role },
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

struct Sighting {
    t: u32,
    cell: Cell,
    foliage: bool,
    /// Chebyshev distance to the nearer pursuer.
    dist: f64,
    llp: Cell,
}

fn sightings(entries: &[TeamRecord], arena: &Arena) -> Vec<Sighting> {
    entries
        .iter()
        .filter_map(|r| {
            r.evader_detection().map(|cell| Sighting {
                t: r.t,
                cell,
                foliage: arena.map().kind(cell) == CellKind::Foliage,
                dist: cell.chebyshev(r.hlp.self_state.position).min(cell.chebyshev(r.llp.self_state.position)) as f64,
                llp: r.llp.self_state.position,
            })
        })
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Per-step displacement between consecutive sightings.
fn displacements(s: &[Sighting]) -> Vec<f64> {
    s.windows(2).map(|w| w[1].cell.manhattan(w[0].cell) as f64 / (w[1].t - w[0].t) as f64).collect()
}

/// Per-step change in ground distance to the LLP between consecutive
/// sightings; positive when the evader opens the gap.
fn llp_drift(s: &[Sighting], arena: &Arena) -> Vec<f64> {
    let gd = |a: Cell, b: Cell| arena.ground_distance(a, b).map(|d| d as f64);
    s.windows(2)
        .filter_map(|w| {
            let before = gd(w[0].cell, w[0].llp)?;
            let after = gd(w[1].cell, w[1].llp)?;
            Some((after - before) / (w[1].t - w[0].t) as f64)
        })
        .collect()
}

/// Per-step ground distance covered between consecutive sightings.
fn geodesic_speeds(s: &[Sighting], arena: &Arena) -> Vec<f64> {
    s.windows(2)
        .filter_map(|w| arena.ground_distance(w[0].cell, w[1].cell).map(|d| d as f64 / (w[1].t - w[0].t) as f64))
        .collect()
}

/// Feature vector for the history prefix ending at `t`. Reads only entries
/// with timestep at most `t`.
pub fn classifier_features(history: &TeamHistory, arena: &Arena, t: u32) -> Result<Vec<f64>, ClassifierError> {
    let last = history.last().map(|r| r.t);
    if last.map_or(true, |l| t > l) {
        return Err(ClassifierError::BeyondHistory { t, last });
    }
    let entries = history.prefix(t);
    let horizon = arena.horizon.max(1) as f64;
    let map = arena.map();
    let all = sightings(entries, arena);
    let start = (t + 1).saturating_sub(WINDOW);
    let recent: Vec<&Sighting> = all.iter().filter(|s| s.t >= start).collect();
    let window_len = (t - start + 1) as f64;
    let or_sentinel = |x: Option<f64>| x.unwrap_or(SENTINEL);

    let recent_owned: Vec<Sighting> =
        recent.iter().map(|s| Sighting { t: s.t, cell: s.cell, foliage: s.foliage, dist: s.dist, llp: s.llp }).collect();
    let win_disp = displacements(&recent_owned);
    let win_disp_mean = mean(win_disp.iter().copied());
    let win_disp_var =
        win_disp_mean.map(|m| win_disp.iter().map(|d| (d - m).powi(2)).sum::<f64>() / win_disp.len() as f64);

    // Staleness at each step of the window, capped at the window length.
    let mut staleness_sum = 0.0;
    for step in start..=t {
        let s = all.iter().rev().find(|s| s.t <= step).map_or(WINDOW, |s| (step - s.t).min(WINDOW));
        staleness_sum += s as f64 / WINDOW as f64;
    }

    let cum_disp = displacements(&all);
    let still = mean(cum_disp.iter().map(|d| if *d == 0.0 { 1.0 } else { 0.0 }));
    let first = all.first();
    let last_seen = all.last();
    let span = (map.width().max(map.height())) as f64;

    let mut f = Vec::with_capacity(CLASSIFIER_FEATURES);
    f.push(recent.len() as f64 / window_len);
    f.push(if recent.is_empty() { 0.0 } else { 1.0 });
    f.push(or_sentinel(win_disp_mean));
    f.push(or_sentinel(win_disp_var));
    f.push(staleness_sum / window_len);
    f.push(or_sentinel(mean(recent.iter().map(|s| if s.foliage { 1.0 } else { 0.0 }))));
    f.push(or_sentinel(mean(recent.iter().map(|s| s.dist / span))));
    f.push(if all.is_empty() { 1.0 } else { 0.0 });
    f.push(all.len() as f64 / (t + 1) as f64);
    f.push(or_sentinel(first.map(|s| s.t as f64 / horizon)));
    f.push(or_sentinel(mean(cum_disp.iter().copied())));
    f.push(or_sentinel(still));
    f.push(or_sentinel(mean(all.iter().map(|s| if s.foliage { 1.0 } else { 0.0 }))));
    f.push(or_sentinel(mean(all.iter().map(|s| s.dist / span))));
    let time = t as f64 / horizon;
    f.push(time);
    f.push(time * time);
    f.push(or_sentinel(first.zip(last_seen).map(|(a, b)| a.cell.manhattan(b.cell) as f64 / span)));
    f.push(or_sentinel(mean(all.iter().map(|s| s.cell.col as f64 / map.width() as f64))));
    f.push(or_sentinel(mean(all.iter().map(|s| s.cell.row as f64 / map.height() as f64))));
    f.push(last_seen.map_or(1.0, |s| ((t - s.t) as f64 / horizon).min(1.0)));
    let net_speed = first.zip(last_seen).filter(|(a, b)| b.t > a.t).and_then(|(a, b)| {
        arena.ground_distance(a.cell, b.cell).map(|d| d as f64 / (b.t - a.t) as f64)
    });
    f.push(or_sentinel(net_speed));
    f.push(or_sentinel(mean(all.iter().map(|s| open_exposure(arena, s.cell)))));
    f.push(or_sentinel(mean(llp_drift(&all, arena).into_iter())));
    f.push(or_sentinel(mean(geodesic_speeds(&all, arena).into_iter())));
    f.push(if all.is_empty() { time } else { 0.0 });
    debug_assert_eq!(f.len(), CLASSIFIER_FEATURES);
    Ok(f)
}

/// Rebuilds the team history of a logged episode by re-simulating each
/// observation from the logged states. Every step is checked against the
/// logged visible-cell digest and detections.
pub fn team_history_from_log(log: &EpisodeLog, arena: &Arena) -> Result<TeamHistory, ClassifierError> {
    let map = arena.map();
    let mut history = TeamHistory::new();
    let goal = log.header.scenario.evader_goal;
    let mut push = |t: u32, hlp, llp, evader, logged: &[ObservationDigest]| -> Result<(), ClassifierError> {
        let state = crate::game::EpisodeState {
            hlp,
            llp,
            evader,
            evader_goal: goal,
            t,
            horizon: log.header.horizon,
            status: crate::game::Status::Running,
        };
        let h = make_observation(map, &state, Role::Hlp, log.header.fov);
        let l = make_observation(map, &state, Role::Llp, log.header.fov);
        for (obs, role) in [(&h, Role::Hlp), (&l, Role::Llp)] {
            let matches = logged.iter().any(|d| d.observer == role && *d == ObservationDigest::from(obs));
            if !matches {
                return Err(ClassifierError::LogMismatch { t, observer: role });
            }
        }
        history.fuse(h, l).map_err(|_| ClassifierError::LogMismatch { t, observer: Role::Hlp })
    };
    for s in &log.steps {
        push(s.t, s.hlp, s.llp, s.evader, &s.observations)?;
    }
    let f = &log.footer;
    push(f.final_t, f.hlp, f.llp, f.evader, &f.observations)?;
    Ok(history)
}

/// One episode's examples: the feature vector at every timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledEpisode {
    pub id: usize,
    pub pursuer_level: u32,
    pub label: u32,
    pub final_t: u32,
    /// Indexed by timestep, `0..=final_t`.
    pub features: Vec<Vec<f64>>,
}

impl LabeledEpisode {
    pub fn end_features(&self) -> &[f64] {
        self.features.last().expect("at least the initial timestep")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub classes: usize,
    pub episodes: Vec<LabeledEpisode>,
    /// Episode ids of the training split; the rest are held out.
    pub train_ids: Vec<usize>,
}

impl Dataset {
    pub fn train(&self) -> impl Iterator<Item = &LabeledEpisode> {
        self.episodes.iter().filter(|e| self.train_ids.binary_search(&e.id).is_ok())
    }

    pub fn heldout(&self) -> impl Iterator<Item = &LabeledEpisode> {
        self.episodes.iter().filter(|e| self.train_ids.binary_search(&e.id).is_err())
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("dataset serialises");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    /// Copy with labels replaced by uniform random classes (per episode).
    pub fn with_shuffled_labels(&self, seed: u64) -> Dataset {
        use rand::Rng;
        let mut rng = child_rng(seed, &[0x5AFF]);
        let mut out = self.clone();
        for e in &mut out.episodes {
            e.label = rng.gen_range(0..self.classes as u32);
        }
        out
    }

    /// Splits episode ids 80/20 with a seeded shuffle.
    fn split(n: usize, seed: u64) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut child_rng(seed, &[0x5B17]));
        let mut train: Vec<usize> = ids[..(n as f64 * TRAIN_FRACTION).round() as usize].to_vec();
        train.sort_unstable();
        train
    }

    pub fn from_episodes(classes: usize, episodes: Vec<LabeledEpisode>, seed: u64) -> Dataset {
        let train_ids = Self::split(episodes.len(), seed);
        Dataset { classes, episodes, train_ids }
    }
}

/// All timestep features of a recorded episode.
pub fn episode_features(history: &TeamHistory, arena: &Arena) -> Result<Vec<Vec<f64>>, ClassifierError> {
    (0..history.len() as u32).map(|t| classifier_features(history, arena, t)).collect()
}

/// Plays `episodes_per_pair` episodes for every (pursuer level, evader level)
/// pair of the library and labels them with the evader level.
pub fn generate_dataset(
    arena: &Arena,
    library: &LevelLibrary,
    sampler: &SamplerSpec,
    reward: RewardSpec,
    episodes_per_pair: usize,
    seed: u64,
) -> Result<Dataset, ClassifierError> {
    let levels = library.levels();
    let mut jobs = Vec::new();
    for p in 0..levels {
        for e in 0..levels {
            for i in 0..episodes_per_pair {
                jobs.push((p, e, i));
            }
        }
    }
    let episodes: Vec<LabeledEpisode> = jobs
        .par_iter()
        .enumerate()
        .map(|(id, &(p, e, i))| {
            let ep_seed = derive_seed(seed, &[p as u64, e as u64, i as u64]);
            let scenario = scenario_for(arena, sampler, ep_seed)?;
            let out = rollout(
                arena,
                library.pursuers(p).expect("complete library"),
                library.evader(e).expect("complete library"),
                &scenario,
                ep_seed,
                reward,
                Recording { log: false, team_history: true },
                "",
            )?;
            let history = out.team_history.expect("history recorded");
            Ok(LabeledEpisode {
                id,
                pursuer_level: p,
                label: e,
                final_t: out.final_t,
                features: episode_features(&history, arena)?,
            })
        })
        .collect::<Result<_, ClassifierError>>()?;
    Ok(Dataset::from_episodes(levels as usize, episodes, seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMetadata {
    pub dataset_hash: String,
    pub train_examples: usize,
    pub train_accuracy: f64,
    /// Argmax accuracy at the last timestep of held-out episodes.
    pub heldout_end_accuracy: f64,
    pub heldout_episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierModel {
    pub version: u32,
    pub schema_hash: String,
    pub classes: usize,
    /// Standardisation applied before the linear layer.
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Row per class: bias followed by one weight per feature.
    pub weights: Vec<Vec<f64>>,
    pub metadata: Option<ModelMetadata>,
}

impl ClassifierModel {
    /// Zero-weight model: uniform output.
    pub fn uniform(classes: usize) -> Self {
        Self {
            version: MODEL_VERSION,
            schema_hash: classifier_schema_hash(),
            classes,
            mean: vec![0.0; CLASSIFIER_FEATURES],
            scale: vec![1.0; CLASSIFIER_FEATURES],
            weights: vec![vec![0.0; CLASSIFIER_FEATURES + 1]; classes],
            metadata: None,
        }
    }

    pub fn check_schema(&self) -> Result<(), ClassifierError> {
        let runtime = classifier_schema_hash();
        if self.schema_hash != runtime || self.version != MODEL_VERSION {
            return Err(ClassifierError::SchemaMismatch { model: self.schema_hash.clone(), runtime });
        }
        Ok(())
    }

    fn standardise(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn predict(&self, features: &[f64]) -> Vec<f64> {
        softmax_scores(&self.weights, &self.standardise(features))
    }
}

fn softmax_scores(weights: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
    let logits: Vec<f64> =
        weights.iter().map(|w| w[0] + w[1..].iter().zip(z).map(|(a, b)| a * b).sum::<f64>()).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Argmax with ties to the lower class.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy plus `l2 / 2 * |W|^2` (biases unpenalised) and its
/// gradient with respect to `weights`.
pub fn loss_and_gradient(weights: &[Vec<f64>], xs: &[Vec<f64>], ys: &[usize], l2: f64) -> (f64, Vec<Vec<f64>>) {
    let n = xs.len() as f64;
    let (loss, mut grad) = xs
        .par_iter()
        .zip(ys)
        .fold(
            || (0.0, vec![vec![0.0; weights[0].len()]; weights.len()]),
            |(mut loss, mut grad), (x, &y)| {
                let p = softmax_scores(weights, x);
                loss -= p[y].max(f64::MIN_POSITIVE).ln();
                for (k, row) in grad.iter_mut().enumerate() {
                    let d = p[k] - if k == y { 1.0 } else { 0.0 };
                    row[0] += d;
                    for (g, xi) in row[1..].iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
                (loss, grad)
            },
        )
        .reduce(
            || (0.0, vec![vec![0.0; weights[0].len()]; weights.len()]),
            |(la, mut ga), (lb, gb)| {
                for (ra, rb) in ga.iter_mut().zip(&gb) {
                    for (a, b) in ra.iter_mut().zip(rb) {
                        *a += b;
                    }
                }
                (la + lb, ga)
            },
        );
    let mut total = loss / n;
    for (row, w) in grad.iter_mut().zip(weights) {
        for (j, (g, wj)) in row.iter_mut().zip(w).enumerate() {
            *g /= n;
            if j > 0 {
                *g += l2 * wj;
                total += 0.5 * l2 * wj * wj;
            }
        }
    }
    (total, grad)
}

/// Fits the model on every timestep of the training episodes by full-batch
/// gradient descent from zero weights.
pub fn train_classifier(dataset: &Dataset) -> Result<ClassifierModel, ClassifierError> {
    let train: Vec<&LabeledEpisode> = dataset.train().collect();
    let mut present = vec![false; dataset.classes];
    for e in &train {
        present[e.label as usize] = true;
    }
    if present.iter().filter(|p| **p).count() < 2 {
        return Err(ClassifierError::DegenerateDataset);
    }
    let raw: Vec<&Vec<f64>> = train.iter().flat_map(|e| e.features.iter()).collect();
    let ys: Vec<usize> = train.iter().flat_map(|e| std::iter::repeat(e.label as usize).take(e.features.len())).collect();
    let n = raw.len() as f64;
    let mut model = ClassifierModel::uniform(dataset.classes);
    for j in 0..CLASSIFIER_FEATURES {
        let m = raw.iter().map(|x| x[j]).sum::<f64>() / n;
        let var = raw.iter().map(|x| (x[j] - m).powi(2)).sum::<f64>() / n;
        model.mean[j] = m;
        model.scale[j] = if var > 1e-12 { var.sqrt() } else { 1.0 };
    }
    let xs: Vec<Vec<f64>> = raw.iter().map(|x| model.standardise(x)).collect();
    for _ in 0..EPOCHS {
        let (_, grad) = loss_and_gradient(&model.weights, &xs, &ys, L2);
        for (w, g) in model.weights.iter_mut().zip(&grad) {
            for (wi, gi) in w.iter_mut().zip(g) {
                *wi -= LEARNING_RATE * gi;
            }
        }
    }
    let train_correct = xs.iter().zip(&ys).filter(|(x, y)| argmax(&softmax_scores(&model.weights, x)) == **y).count();
    let heldout: Vec<&LabeledEpisode> = dataset.heldout().collect();
    model.metadata = Some(ModelMetadata {
        dataset_hash: dataset.hash(),
        train_examples: xs.len(),
        train_accuracy: train_correct as f64 / n,
        heldout_end_accuracy: end_accuracy(&model, heldout.iter().copied()),
        heldout_episodes: heldout.len(),
    });
    Ok(model)
}

/// Argmax accuracy at each episode's last timestep.
pub fn end_accuracy<'a>(model: &ClassifierModel, episodes: impl Iterator<Item = &'a LabeledEpisode>) -> f64 {
    let (hit, n) = episodes.fold((0usize, 0usize), |(h, n), e| {
        let ok = argmax(&model.predict(e.end_features())) == e.label as usize;
        (h + usize::from(ok), n + 1)
    });
    if n == 0 {
        0.0
    } else {
        hit as f64 / n as f64
    }
}

/// Class probabilities for the history prefix ending at `t`.
pub fn classify(
    model: &ClassifierModel,
    history: &TeamHistory,
    arena: &Arena,
    t: u32,
) -> Result<Vec<f64>, ClassifierError> {
    model.check_schema()?;
    Ok(model.predict(&classifier_features(history, arena, t)?))
}

/// Accuracy of argmax classification at every timestep; episodes that ended
/// before `t` drop out of that point's denominator.
pub fn classification_rate_curve<'a>(
    model: &ClassifierModel,
    episodes: impl Iterator<Item = &'a LabeledEpisode>,
) -> Vec<(u32, f64)> {
    let mut hits: Vec<(usize, usize)> = Vec::new();
    for e in episodes {
        for (t, x) in e.features.iter().enumerate() {
            if hits.len() <= t {
                hits.resize(t + 1, (0, 0));
            }
            let ok = argmax(&model.predict(x)) == e.label as usize;
            hits[t].0 += usize::from(ok);
            hits[t].1 += 1;
        }
    }
    hits.into_iter().enumerate().map(|(t, (h, n))| (t as u32, h as f64 / n as f64)).collect()
}

/// Labels logged episodes and extracts their features for curve evaluation.
pub fn label_logs(logs: &[(EpisodeLog, u32)], arena: &Arena) -> Result<Vec<LabeledEpisode>, ClassifierError> {
    logs.par_iter()
        .enumerate()
        .map(|(id, (log, label))| {
            let history = team_history_from_log(log, arena)?;
            Ok(LabeledEpisode {
                id,
                pursuer_level: 0,
                label: *label,
                final_t: log.footer.final_t,
                features: episode_features(&history, arena)?,
            })
        })
        .collect()
}
