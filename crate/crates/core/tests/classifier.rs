mod common;

use proptest::prelude::*;
use rand::Rng;

use peg_core::arena::Arena;
use peg_core::classifier::{
    argmax, classification_rate_curve, classifier_features, classify, end_accuracy, episode_features,
    generate_dataset, team_history_from_log, train_classifier, ClassifierError, ClassifierModel, Dataset,
    LabeledEpisode, CLASSIFIER_FEATURES, SENTINEL,
};
use peg_core::map::{load_map, DEFAULT_MAP};
use peg_core::rng::child_rng;
use peg_core::training::learner::scenario_for;
use peg_core::training::{rollout, Recording, RewardSpec, SamplerSpec};
use peg_core::visibility::TeamHistory;

fn arena() -> Arena {
    Arena::with_defaults(load_map(DEFAULT_MAP).unwrap())
}

/// Team history of one episode between untrained level-1 pursuers and the
/// level-0 evader.
fn sample_history(seed: u64) -> TeamHistory {
    let arena = arena();
    let lib = common::untrained_library(seed);
    let scenario = scenario_for(&arena, &SamplerSpec::default(), seed).unwrap();
    let out = rollout(
        &arena,
        lib.pursuers(1).unwrap(),
        lib.evader(0).unwrap(),
        &scenario,
        seed,
        RewardSpec::default(),
        Recording::ALL,
        "",
    )
    .unwrap();
    out.team_history.unwrap()
}

/// Episodes whose features at every timestep are noisy copies of a class
/// centre; the classes are far apart.
fn separable_dataset(seed: u64) -> Dataset {
    let mut rng = child_rng(seed, &[0]);
    let episodes = (0..100)
        .map(|id| {
            let label = (id % 2) as u32;
            let centre = if label == 0 { -3.0 } else { 3.0 };
            let len = rng.gen_range(3..12);
            let features = (0..len)
                .map(|_| (0..CLASSIFIER_FEATURES).map(|_| centre + rng.gen_range(-0.5..0.5)).collect())
                .collect();
            LabeledEpisode { id, pursuer_level: 0, label, final_t: len as u32 - 1, features }
        })
        .collect();
    Dataset::from_episodes(2, episodes, seed)
}

#[test]
fn untrained_model_is_uniform() {
    let model = ClassifierModel::uniform(2);
    let history = sample_history(3);
    let p = classify(&model, &history, &arena(), 0).unwrap();
    assert_eq!(p, vec![0.5, 0.5]);
}

#[test]
fn separable_data_is_classified_perfectly() {
    let model = train_classifier(&separable_dataset(1)).unwrap();
    assert_eq!(model.metadata.as_ref().unwrap().heldout_end_accuracy, 1.0);
    let ds = separable_dataset(1);
    let curve = classification_rate_curve(&model, ds.heldout());
    assert!(curve.iter().all(|(_, a)| *a == 1.0));
}

#[test]
fn single_class_dataset_is_degenerate() {
    let mut ds = separable_dataset(2);
    for e in &mut ds.episodes {
        e.label = 1;
    }
    assert!(matches!(train_classifier(&ds), Err(ClassifierError::DegenerateDataset)));
}

#[test]
fn training_is_deterministic() {
    let a = train_classifier(&separable_dataset(4)).unwrap();
    let b = train_classifier(&separable_dataset(4)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn split_is_by_episode_and_disjoint() {
    let ds = separable_dataset(5);
    let train: Vec<usize> = ds.train().map(|e| e.id).collect();
    let held: Vec<usize> = ds.heldout().map(|e| e.id).collect();
    assert_eq!(train.len(), 80);
    assert_eq!(held.len(), 20);
    assert!(train.iter().all(|id| !held.contains(id)));
}

#[test]
fn dataset_counts_and_labels() {
    let arena = Arena::with_defaults(load_map(".........\n..~~.....\n.....#...\n.........\n").unwrap());
    let lib = common::untrained_library(6);
    let ds = generate_dataset(&arena, &lib, &SamplerSpec::default(), RewardSpec::default(), 10, 6).unwrap();
    assert_eq!(ds.episodes.len(), 40);
    assert_eq!(ds.episodes.iter().filter(|e| e.label == 0).count(), 20);
    for e in &ds.episodes {
        assert_eq!(e.features.len(), e.final_t as usize + 1);
        assert!(e.features.iter().all(|x| x.len() == CLASSIFIER_FEATURES));
    }
    let ds2 = generate_dataset(&arena, &lib, &SamplerSpec::default(), RewardSpec::default(), 10, 6).unwrap();
    assert_eq!(ds.hash(), ds2.hash());
}

#[test]
fn shuffled_labels_give_chance_accuracy() {
    let arena = Arena::with_defaults(load_map(".........\n..~~.....\n.....#...\n.........\n").unwrap());
    let lib = common::untrained_library(7);
    let ds = generate_dataset(&arena, &lib, &SamplerSpec::default(), RewardSpec::default(), 100, 7).unwrap();
    let shuffled = ds.with_shuffled_labels(8);
    let model = train_classifier(&shuffled).unwrap();
    let n = shuffled.heldout().count();
    let acc = end_accuracy(&model, shuffled.heldout());
    let half_width = 2.575_829_303_548_901 * (0.25 / n as f64).sqrt();
    assert!((acc - 0.5).abs() <= half_width, "accuracy {acc} over {n}");
}

#[test]
fn never_seen_history_uses_sentinels() {
    let arena = arena();
    let history = sample_history(11);
    let first_detection = history.entries().iter().position(|r| r.evader_detection().is_some());
    let t = first_detection.map_or(history.len() - 1, |i| i.saturating_sub(1));
    if first_detection == Some(0) {
        return;
    }
    let f = classifier_features(&history, &arena, t as u32).unwrap();
    // Never-seen indicator is set and detection-derived statistics are
    // sentinels.
    assert_eq!(f[7], 1.0);
    assert_eq!(f[2], SENTINEL);
    assert_eq!(f[9], SENTINEL);
}

#[test]
fn features_past_history_are_rejected() {
    let history = sample_history(12);
    let t = history.len() as u32;
    assert!(matches!(classifier_features(&history, &arena(), t), Err(ClassifierError::BeyondHistory { .. })));
}

#[test]
fn logged_episode_reproduces_history_features() {
    let arena = arena();
    let lib = common::untrained_library(13);
    let scenario = scenario_for(&arena, &SamplerSpec::default(), 13).unwrap();
    let out = rollout(
        &arena,
        lib.pursuers(0).unwrap(),
        lib.evader(0).unwrap(),
        &scenario,
        13,
        RewardSpec::default(),
        Recording::ALL,
        "",
    )
    .unwrap();
    let from_log = team_history_from_log(out.log.as_ref().unwrap(), &arena).unwrap();
    let direct = out.team_history.unwrap();
    assert_eq!(episode_features(&from_log, &arena).unwrap(), episode_features(&direct, &arena).unwrap());
}

#[test]
fn schema_mismatch_is_refused() {
    let mut model = ClassifierModel::uniform(2);
    model.schema_hash = "other".into();
    let history = sample_history(14);
    assert!(matches!(classify(&model, &history, &arena(), 0), Err(ClassifierError::SchemaMismatch { .. })));
}

#[test]
fn argmax_ties_prefer_lower_class() {
    assert_eq!(argmax(&[0.5, 0.5]), 0);
    assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Features at t depend only on the first t + 1 records.
    #[test]
    fn prefix_consistency(seed in 0u64..1000) {
        let arena = arena();
        let history = sample_history(seed);
        for t in [0, history.len() as u32 / 2, history.len() as u32 - 1] {
            let mut truncated = TeamHistory::new();
            for rec in history.prefix(t) {
                truncated.fuse(rec.hlp.clone(), rec.llp.clone()).unwrap();
            }
            prop_assert_eq!(
                classifier_features(&history, &arena, t).unwrap(),
                classifier_features(&truncated, &arena, t).unwrap()
            );
        }
    }

    /// Outputs are probability vectors and classification is pure.
    #[test]
    fn outputs_are_distributions(seed in 0u64..1000, scale in 0.0f64..5.0) {
        let mut rng = child_rng(seed, &[1]);
        let mut model = ClassifierModel::uniform(3);
        for row in &mut model.weights {
            for w in row.iter_mut() {
                *w = rng.gen_range(-scale..=scale);
            }
        }
        let history = sample_history(seed);
        let arena = arena();
        for t in 0..history.len() as u32 {
            let p = classify(&model, &history, &arena, t).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|x| *x >= 0.0));
            prop_assert_eq!(p, classify(&model, &history, &arena, t).unwrap());
        }
    }
}
