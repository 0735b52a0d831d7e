//! Acceptance criteria. Runs every criterion, prints one
//! `criterion N: PASS|FAIL ...` line each, and exits nonzero if any fails.

mod common;

use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;

use peg_core::arena::Arena;
use peg_core::classifier::{
    classification_rate_curve, end_accuracy, generate_dataset, label_logs, loss_and_gradient, train_classifier,
    ClassifierModel, Dataset,
};
use peg_core::evaluation::{cell_seeds, compute_metrics, cross_play, play_logs, CrossPlayReport};
use peg_core::game::{Heading, Status};
use peg_core::log::EpisodeLog;
use peg_core::map::{load_map, Cell, GridMap, DEFAULT_MAP};
use peg_core::online::{play_online_logs, ControllerConfig};
use peg_core::policy::{Policy, Scope};
use peg_core::rng::{child_rng, rng_from};
use peg_core::training::learner::{evaluate, optimize_policy, scenario_for, TrainConfig};
use peg_core::training::library::{build_level_library, LevelLibrary};
use peg_core::training::{rollout, Recording, RewardSpec, SamplerSpec};
use peg_core::visibility::{ground_fov, hlp_fov, line_of_sight};

/// Library seed for the desk-scale criteria. Fixed up front; see the
/// decisions ledger for the spread of outcomes over other seeds.
const LIBRARY_SEED: u64 = 1;
const EVAL_SEED: u64 = 2024;
const EPISODES_PER_CELL: usize = 1000;
const CLASSIFIER_EPISODES_PER_PAIR: usize = 300;

fn report(n: u32, pass: bool, detail: &str) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

struct Fixture {
    arena: Arena,
    library: LevelLibrary,
    dataset: Dataset,
    model: ClassifierModel,
    matrix: CrossPlayReport,
    build_seconds: f64,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let start = Instant::now();
        let arena = Arena::with_defaults(load_map(DEFAULT_MAP).expect("bundled map loads"));
        let config = TrainConfig { seed: LIBRARY_SEED, ..TrainConfig::default() };
        let library = build_level_library(&arena, 1, RewardSpec::default(), &config).expect("library builds");
        let matrix = cross_play(&arena, &library, &config.sampler, RewardSpec::default(), EPISODES_PER_CELL, EVAL_SEED, None)
            .expect("cross-play runs");
        let build_seconds = start.elapsed().as_secs_f64();
        let dataset = generate_dataset(
            &arena,
            &library,
            &config.sampler,
            RewardSpec::default(),
            CLASSIFIER_EPISODES_PER_PAIR,
            LIBRARY_SEED,
        )
        .expect("dataset generates");
        let model = train_classifier(&dataset).expect("classifier trains");
        Fixture { arena, library, dataset, model, matrix, build_seconds }
    })
}

fn criterion_1_visibility_oracles() -> bool {
    let start = Instant::now();
    let mut rng = rng_from(0x0F0F);
    let mut mismatches = 0usize;
    let mut checks = 0usize;
    let headings = [Heading::N, Heading::S, Heading::E, Heading::W];
    for _ in 0..1000 {
        let building = rng.gen_range(0.0..0.4);
        let foliage = rng.gen_range(0.0..0.3);
        let map = common::random_map(&mut rng, 20, 20, building, foliage);
        let cell = |rng: &mut peg_core::rng::SimRng| Cell::new(rng.gen_range(0..20), rng.gen_range(0..20));
        for _ in 0..4 {
            let p = cell(&mut rng);
            checks += 1;
            if hlp_fov(&map, p, 4) != common::hlp_fov_oracle(&map, p, 4) {
                mismatches += 1;
            }
            for h in headings {
                checks += 1;
                if ground_fov(&map, p, h, 2) != common::ground_fov_oracle(&map, p, h, 2) {
                    mismatches += 1;
                }
            }
        }
        for _ in 0..20 {
            let (a, b) = (cell(&mut rng), cell(&mut rng));
            checks += 1;
            if line_of_sight(&map, a, b) != common::los_oracle(&map, a, b) {
                mismatches += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = mismatches == 0 && secs < 60.0;
    report(1, pass, &format!("1000 maps, {checks} checks, {mismatches} mismatches, {secs:.1}s"));
    pass
}

fn criterion_2_determinism() -> bool {
    let arena = Arena::with_defaults(load_map(DEFAULT_MAP).unwrap());
    let library = common::untrained_library(3);
    let sampler = SamplerSpec::default();
    let reward = RewardSpec::default();
    let run_logs = || -> Vec<String> {
        (0..5u64)
            .map(|i| {
                let seed = 100 + i;
                let scenario = scenario_for(&arena, &sampler, seed).unwrap();
                let out = rollout(
                    &arena,
                    library.pursuers(1).unwrap(),
                    library.evader(0).unwrap(),
                    &scenario,
                    seed,
                    reward,
                    Recording::LOG,
                    "det",
                )
                .unwrap();
                out.log.unwrap().to_jsonl()
            })
            .collect()
    };
    let run_matrix =
        || serde_json::to_string(&cross_play(&arena, &library, &sampler, reward, 20, 9, None).unwrap()).unwrap();
    let (logs, matrix) = (run_logs(), run_matrix());
    let mut identical = 0;
    for _ in 0..10 {
        if run_logs() == logs && run_matrix() == matrix {
            identical += 1;
        }
    }
    let pass = identical == 10;
    report(2, pass, &format!("{identical}/10 repeated trials byte-identical"));
    pass
}

/// Stay-only evader on an open 3x3 map; capture worth 1.
fn tiny_pursuer_win_rate() -> f64 {
    let arena = Arena::with_defaults(GridMap::open(3, 3));
    let reward = RewardSpec { capture: 1.0, goal: 1.0, step_cost: 0.001, detection: 0.0 };
    let config = TrainConfig {
        iterations: 5,
        episodes_per_iteration: 200,
        learning_rate: 0.05,
        init_scale: 0.1,
        seed: 11,
        ..TrainConfig::default()
    };
    let (policy, _) =
        optimize_policy(&arena, Scope::PursuerPair, 0, &Policy::stationary(Scope::Evader), reward, &config).unwrap();
    win_rate(&arena, Scope::PursuerPair, &policy, &Policy::stationary(Scope::Evader), reward, &config)
}

/// Evader against frozen stationary pursuers on an open 3x3 map.
fn tiny_evader_win_rate() -> f64 {
    let arena = Arena::with_defaults(GridMap::open(3, 3));
    let reward = RewardSpec { capture: 1.0, goal: 1.0, step_cost: 0.001, detection: 0.0 };
    let config = TrainConfig {
        iterations: 5,
        episodes_per_iteration: 200,
        learning_rate: 0.05,
        init_scale: 0.1,
        seed: 12,
        ..TrainConfig::default()
    };
    let pursuers = Policy::stationary(Scope::PursuerPair);
    let (policy, _) = optimize_policy(&arena, Scope::Evader, 1, &pursuers, reward, &config).unwrap();
    win_rate(&arena, Scope::Evader, &policy, &pursuers, reward, &config)
}

fn win_rate(arena: &Arena, scope: Scope, learner: &Policy, opponent: &Policy, reward: RewardSpec, config: &TrainConfig) -> f64 {
    let seeds: Vec<u64> = (0..200).map(|i| 50_000 + i).collect();
    let results = evaluate(arena, scope, learner, opponent, reward, &config.sampler, &seeds).unwrap();
    results.iter().filter(|(_, won)| *won).count() as f64 / results.len() as f64
}

fn max_fd_relative_error() -> f64 {
    let mut rng = child_rng(77, &[1]);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let classes = rng.gen_range(2..4);
        let dim = rng.gen_range(1..5);
        let n = rng.gen_range(3..10);
        let weights: Vec<Vec<f64>> =
            (0..classes).map(|_| (0..=dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let ys: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let l2 = 0.01;
        let (_, grad) = loss_and_gradient(&weights, &xs, &ys, l2);
        let h = 1e-5;
        for k in 0..classes {
            for j in 0..=dim {
                let mut plus = weights.clone();
                let mut minus = weights.clone();
                plus[k][j] += h;
                minus[k][j] -= h;
                let fd = (loss_and_gradient(&plus, &xs, &ys, l2).0 - loss_and_gradient(&minus, &xs, &ys, l2).0) / (2.0 * h);
                let err = (fd - grad[k][j]).abs() / fd.abs().max(grad[k][j].abs()).max(1e-8);
                worst = worst.max(err);
            }
        }
    }
    worst
}

fn criterion_3_training_contract() -> bool {
    let pursuers = tiny_pursuer_win_rate();
    let evader = tiny_evader_win_rate();
    let fd = max_fd_relative_error();
    let pass = pursuers >= 0.95 && evader >= 0.95 && fd <= 1e-4;
    report(
        3,
        pass,
        &format!("3x3 pursuer win {pursuers:.3}, 3x3 evader win {evader:.3}, max gradient relative error {fd:.2e}"),
    );
    pass
}

fn criterion_4_diagonal_dominance() -> bool {
    let f = fixture();
    let w = |p, e| f.matrix.cell(Some(p), e).unwrap().pursuer_win_rate;
    let gap0 = w(0, 0) - w(1, 0);
    let gap1 = w(1, 1) - w(0, 1);
    let pass = gap0 >= 0.20 && gap1 >= 0.20 && f.build_seconds < 1800.0;
    report(
        4,
        pass,
        &format!(
            "E0: P0 {:.3} vs P1 {:.3} (gap {gap0:+.3}); E1: P1 {:.3} vs P0 {:.3} (gap {gap1:+.3}); {} episodes/cell; build+matrix {:.0}s",
            w(0, 0),
            w(1, 0),
            w(1, 1),
            w(0, 1),
            EPISODES_PER_CELL,
            f.build_seconds
        ),
    );
    println!("{}", f.matrix.to_table());
    pass
}

/// Whether `observed` lies in the two-sided 99% normal interval of a
/// binomial proportion `p` over `n` trials.
fn within_99_ci(observed: f64, p: f64, n: usize) -> bool {
    (observed - p).abs() <= 2.575_829_303_548_901 * (p * (1.0 - p) / n as f64).sqrt()
}

fn criterion_5_classifier_accuracy() -> bool {
    let f = fixture();
    let accuracy = f.model.metadata.as_ref().unwrap().heldout_end_accuracy;
    let shuffled = f.dataset.with_shuffled_labels(5);
    let chance_model = train_classifier(&shuffled).unwrap();
    let chance = end_accuracy(&chance_model, shuffled.heldout());
    let n = shuffled.heldout().count();
    let chance_ok = within_99_ci(chance, 0.5, n);
    let pass = accuracy >= 0.90 && chance_ok;
    report(
        5,
        pass,
        &format!("held-out end accuracy {accuracy:.3}; shuffled-label accuracy {chance:.3} over {n} episodes (chance 0.5)"),
    );
    pass
}

fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    xs.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

fn criterion_6_classification_curve() -> bool {
    let f = fixture();
    let curve = classification_rate_curve(&f.model, f.dataset.heldout());
    let acc: Vec<f64> = curve.iter().map(|(_, a)| *a).collect();
    let at5 = acc[5];
    let last = *acc.last().unwrap();
    let smooth = moving_average(&acc, 10);
    let worst_drop = smooth.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
    let pass = last >= at5 && worst_drop <= 0.0;
    report(
        6,
        pass,
        &format!(
            "accuracy t=5 {at5:.3}, final t={} {last:.3}; largest drop of the 10-step moving average {worst_drop:.4}",
            curve.len() - 1
        ),
    );
    pass
}

struct OnlineResults {
    fixed: [[f64; 2]; 2],
    online: [f64; 2],
    online_logs: Vec<(EpisodeLog, u32)>,
    offline_logs: Vec<(EpisodeLog, u32)>,
}

fn online_results() -> &'static OnlineResults {
    static RESULTS: OnceLock<OnlineResults> = OnceLock::new();
    RESULTS.get_or_init(|| {
        let f = fixture();
        let sampler = SamplerSpec::default();
        let reward = RewardSpec::default();
        let seeds = cell_seeds(EVAL_SEED, EPISODES_PER_CELL);
        let mut fixed = [[0.0; 2]; 2];
        let mut offline_logs = Vec::new();
        for p in 0..2u32 {
            for e in 0..2u32 {
                let logs = play_logs(
                    &f.arena,
                    f.library.pursuers(p).unwrap(),
                    f.library.evader(e).unwrap(),
                    &sampler,
                    reward,
                    &seeds,
                    "",
                )
                .unwrap();
                fixed[p as usize][e as usize] = compute_metrics(&logs).unwrap().pursuer_win_rate;
                offline_logs.extend(logs.into_iter().map(|l| (l, e)));
            }
        }
        let mut online = [0.0; 2];
        let mut online_logs = Vec::new();
        for e in 0..2u32 {
            let runs = play_online_logs(
                &f.arena,
                &f.library,
                &f.model,
                f.library.evader(e).unwrap(),
                &sampler,
                reward,
                &seeds,
                ControllerConfig::default(),
                "",
            )
            .unwrap();
            let logs: Vec<EpisodeLog> = runs.into_iter().map(|(l, _)| l).collect();
            online[e as usize] = compute_metrics(&logs).unwrap().pursuer_win_rate;
            online_logs.extend(logs.into_iter().map(|l| (l, e)));
        }
        OnlineResults { fixed, online, online_logs, offline_logs }
    })
}

fn criterion_7_online_improvement() -> bool {
    let r = online_results();
    let vs1 = r.online[1] - r.fixed[0][1];
    let vs0 = r.online[0] - r.fixed[1][0];
    let pass = vs1 >= 0.05 && vs0 >= 0.0;
    report(
        7,
        pass,
        &format!(
            "vs E1: online {:.3} vs fixed P0 {:.3} ({vs1:+.3}); vs E0: online {:.3} vs fixed P1 {:.3} ({vs0:+.3})",
            r.online[1], r.fixed[0][1], r.online[0], r.fixed[1][0]
        ),
    );
    pass
}

fn criterion_8_online_reduction() -> bool {
    let arena = Arena::with_defaults(load_map(DEFAULT_MAP).unwrap());
    let library = common::untrained_library(8);
    // Confident model that always names level 1: only the threshold can
    // keep the controller at level 0.
    let mut model = ClassifierModel::uniform(2);
    model.weights[1][0] = 50.0;
    let sampler = SamplerSpec::default();
    let reward = RewardSpec::default();
    let seeds = cell_seeds(31, 50);
    let mut identical = 0;
    let mut total = 0;
    for e in 0..2u32 {
        let evader = library.evader(e).unwrap();
        let fixed = play_logs(&arena, library.pursuers(0).unwrap(), evader, &sampler, reward, &seeds, "h").unwrap();
        let config = ControllerConfig { theta: 1.0 + 1e-9, dwell: 0, initial_level: 0 };
        let online = play_online_logs(&arena, &library, &model, evader, &sampler, reward, &seeds, config, "h").unwrap();
        for ((log, ctrl), fixed_log) in online.iter().zip(&fixed) {
            total += 1;
            let stripped = log.without_online().to_jsonl();
            if stripped == fixed_log.to_jsonl() && ctrl.switches == 0 {
                identical += 1;
            }
        }
    }
    let pass = identical == total;
    report(8, pass, &format!("{identical}/{total} online logs with theta > 1 byte-identical to fixed level-0 logs"));
    pass
}

fn criterion_9_distribution_shift_report() -> bool {
    let f = fixture();
    let r = online_results();
    let offline = label_logs(&r.offline_logs, &f.arena).unwrap();
    let online = label_logs(&r.online_logs, &f.arena).unwrap();
    let offline_acc = end_accuracy(&f.model, offline.iter());
    let online_acc = end_accuracy(&f.model, online.iter());
    let direction = if online_acc <= offline_acc { "degrades" } else { "does not degrade" };
    let pass = offline_acc.is_finite() && online_acc.is_finite();
    report(
        9,
        pass,
        &format!(
            "end accuracy offline {offline_acc:.3} ({} episodes), online {online_acc:.3} ({} episodes); accuracy {direction} under switching",
            offline.len(),
            online.len()
        ),
    );
    let timeouts = r.online_logs.iter().filter(|(l, _)| l.footer.status == Status::Timeout).count();
    println!("online episodes ending in timeout: {timeouts}");
    pass
}

fn main() {
    let criteria: [(u32, fn() -> bool); 9] = [
        (1, criterion_1_visibility_oracles),
        (2, criterion_2_determinism),
        (3, criterion_3_training_contract),
        (4, criterion_4_diagonal_dominance),
        (5, criterion_5_classifier_accuracy),
        (6, criterion_6_classification_curve),
        (7, criterion_7_online_improvement),
        (8, criterion_8_online_reduction),
        (9, criterion_9_distribution_shift_report),
    ];
    let mut failed = Vec::new();
    for (n, run) in criteria {
        match std::panic::catch_unwind(run) {
            Ok(true) => {}
            Ok(false) => failed.push(n),
            Err(_) => {
                report(n, false, "panicked");
                failed.push(n);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 9 criteria pass");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
