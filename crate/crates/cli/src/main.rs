//! `peg`: train level-k libraries and opponent classifiers, evaluate them
//! offline and online, and render episode replays.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use peg_core::classifier::{
    classification_rate_curve, end_accuracy, generate_dataset, label_logs, train_classifier, ClassifierError,
    ClassifierModel,
};
use peg_core::evaluation::{
    cell_seeds, compute_metrics, cross_play, play_logs, CrossPlayReport, EvalError, LevelMetrics, MetricsDocument,
};
use peg_core::io::{
    load_config, load_library, load_map_file, load_model, save_library, save_model, to_pretty_json, IoError,
    LoadedConfig,
};
use peg_core::log::{deserialize_log, serialize_log, EpisodeLog, LogError};
use peg_core::online::{play_online_logs, ControllerConfig, OnlineError};
use peg_core::replay::{render_replay, ReplayError};
use peg_core::training::library::{build_level_library, LevelLibrary, LibraryError};

#[derive(Debug, Parser)]
#[command(name = "peg", version, about = "Pursuit-evasion level-k training, classification and online evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build and save a level-k policy library.
    TrainLevels(TrainLevelsArgs),
    /// Train the evader-level classifier from a library.
    TrainClassifier(TrainClassifierArgs),
    /// Cross-play evaluation, or one pursuer level against every evader level.
    Evaluate(EvaluateArgs),
    /// Online controller episodes against every evader level.
    OnlineEval(OnlineEvalArgs),
    /// Render an episode log as text or PNG frames.
    Replay(ReplayArgs),
    /// Check a map file.
    ValidateMap(ValidateMapArgs),
}

#[derive(Debug, Args)]
struct TrainLevelsArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    k: u32,
    /// Output library directory.
    #[arg(long)]
    out: PathBuf,
    /// Episodes per cell of the cross-play matrix saved with the library.
    #[arg(long, default_value_t = 200)]
    matrix_episodes: usize,
}

#[derive(Debug, Args)]
struct TrainClassifierArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    library: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    episodes_per_pair: usize,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    library: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    episodes: usize,
    /// Evaluate only this pursuer level and write a metrics document.
    #[arg(long)]
    pursuer_level: Option<u32>,
    /// Report file (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Directory for episode logs (only with --pursuer-level).
    #[arg(long)]
    logs: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OnlineEvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    library: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    episodes: usize,
    /// Overrides the controller threshold from the config.
    #[arg(long)]
    theta: Option<f64>,
    /// Overrides the controller dwell from the config.
    #[arg(long)]
    dwell: Option<u32>,
    /// Metrics document for the online controller (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Comparison report with fixed levels, accuracies and curves (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Directory for online episode logs.
    #[arg(long)]
    logs: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FrameFormat {
    Text,
    Png,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    map: PathBuf,
    #[arg(long, value_enum, default_value_t = FrameFormat::Text)]
    format: FrameFormat,
    /// Output directory for PNG frames; text frames go to stdout without it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Pixels per cell for PNG frames.
    #[arg(long, default_value_t = 16)]
    scale: u32,
}

#[derive(Debug, Args)]
struct ValidateMapArgs {
    path: PathBuf,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("io: {0}")]
    Io(#[from] IoError),
    #[error("io: {path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("log: {path}: {source}")]
    Log { path: PathBuf, source: LogError },
    #[error("training: {0}")]
    Training(#[from] LibraryError),
    #[error("classifier: {0}")]
    Classifier(#[from] ClassifierError),
    #[error("evaluation: {0}")]
    Evaluation(#[from] EvalError),
    #[error("online: {0}")]
    Online(#[from] OnlineError),
    #[error("replay: {0}")]
    Replay(#[from] ReplayError),
    #[error("image: {0}")]
    Image(String),
    #[error("library: map hash {library} does not match config map {config}")]
    LibraryMap { library: String, config: String },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&CliError::Usage(first_line(&e.to_string())), 2),
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e, 1),
    }
}

fn first_line(s: &str) -> String {
    s.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim_start_matches("error: ").to_string()
}

fn fail(e: &CliError, code: u8) -> ExitCode {
    let msg = e.to_string().replace('\n', " ");
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::TrainLevels(a) => train_levels(a),
        Command::TrainClassifier(a) => train_classifier_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::OnlineEval(a) => online_eval(a),
        Command::Replay(a) => replay(a),
        Command::ValidateMap(a) => validate_map(a),
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| CliError::File { path: parent.to_path_buf(), source })?;
    }
    fs::write(path, contents).map_err(|source| CliError::File { path: path.to_path_buf(), source })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_file(path, to_pretty_json(value).as_bytes())
}

fn write_logs(dir: &Path, logs: &[EpisodeLog]) -> Result<(), CliError> {
    for (i, log) in logs.iter().enumerate() {
        let mut buf = Vec::new();
        serialize_log(log, &mut buf).map_err(|source| CliError::File { path: dir.to_path_buf(), source })?;
        write_file(&dir.join(format!("episode_{i:05}.jsonl")), &buf)?;
    }
    Ok(())
}

/// Loads a library and checks that it was trained on the config's map.
fn library_for(config: &LoadedConfig, dir: &Path) -> Result<LevelLibrary, CliError> {
    let (library, manifest) = load_library(dir)?;
    let map_hash = config.arena.map().hash_hex();
    if manifest.map_hash != map_hash {
        return Err(CliError::LibraryMap { library: manifest.map_hash, config: map_hash });
    }
    Ok(library)
}

fn train_levels(a: TrainLevelsArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.config)?;
    let sc = &cfg.config;
    let train = sc.train_config(a.seed);
    let library = build_level_library(&cfg.arena, a.k, sc.reward, &train)?;
    save_library(&a.out, &library, a.seed, &cfg.arena.map().hash_hex())?;
    let matrix = cross_play(&cfg.arena, &library, &train.sampler, sc.reward, a.matrix_episodes, a.seed, None)?;
    write_json(&a.out.join("cross_play.json"), &matrix)?;
    print!("{}", matrix.to_table());
    Ok(())
}

#[derive(Debug, Serialize)]
struct ClassifierSummary {
    dataset_hash: String,
    train_accuracy: f64,
    heldout_end_accuracy: f64,
    heldout_episodes: usize,
}

fn train_classifier_cmd(a: TrainClassifierArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.config)?;
    let library = library_for(&cfg, &a.library)?;
    let sc = &cfg.config;
    let dataset = generate_dataset(&cfg.arena, &library, &sc.sampler(), sc.reward, a.episodes_per_pair, a.seed)?;
    let model = train_classifier(&dataset)?;
    save_model(&a.out, &model)?;
    let meta = model.metadata.as_ref().expect("trained model has metadata");
    let summary = ClassifierSummary {
        dataset_hash: meta.dataset_hash.clone(),
        train_accuracy: meta.train_accuracy,
        heldout_end_accuracy: meta.heldout_end_accuracy,
        heldout_episodes: meta.heldout_episodes,
    };
    print!("{}", to_pretty_json(&summary));
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.config)?;
    let library = library_for(&cfg, &a.library)?;
    let sc = &cfg.config;
    let sampler = sc.sampler();
    let Some(level) = a.pursuer_level else {
        if a.logs.is_some() {
            return Err(CliError::Usage("--logs requires --pursuer-level".into()));
        }
        let report = cross_play(&cfg.arena, &library, &sampler, sc.reward, a.episodes, a.seed, None)?;
        write_json(&a.out, &report)?;
        print!("{}", report.to_table());
        return Ok(());
    };
    let pursuers = library
        .pursuers(level)
        .ok_or_else(|| CliError::Usage(format!("pursuer level {level} is not in the library (K={})", library.k)))?;
    let seeds = cell_seeds(a.seed, a.episodes);
    let mut rows = Vec::new();
    let mut all_logs = Vec::new();
    for e in 0..library.levels() {
        let evader = library.evader(e).expect("complete library");
        let logs = play_logs(&cfg.arena, pursuers, evader, &sampler, sc.reward, &seeds, &cfg.hash)?;
        rows.push(LevelMetrics { evader_level: e, metrics: compute_metrics(&logs)? });
        all_logs.push(logs);
    }
    if let Some(dir) = &a.logs {
        for (e, logs) in all_logs.iter().enumerate() {
            write_logs(&dir.join(format!("evader_L{e}")), logs)?;
        }
    }
    let doc = MetricsDocument { config_hash: cfg.hash.clone(), seed: a.seed, episodes_per_level: a.episodes, rows };
    write_json(&a.out, &doc)?;
    print!("{}", metrics_table(&format!("P{level}"), &doc));
    Ok(())
}

fn metrics_table(source: &str, doc: &MetricsDocument) -> String {
    let mut out = format!("{:<10} {:<8} {:>12} {:>12}\n", "pursuers", "evader", "pursuer_win", "evader_seen");
    for r in &doc.rows {
        out.push_str(&format!(
            "{:<10} {:<8} {:>12} {:>12}\n",
            source,
            format!("E{}", r.evader_level),
            format!("{:.3}", r.metrics.pursuer_win_rate),
            format!("{:.3}", r.metrics.evader_seen_rate)
        ));
    }
    out
}

/// Online controller against fixed levels, with classifier accuracy on
/// offline and online logs.
#[derive(Debug, Serialize)]
struct OnlineReport {
    controller: ControllerConfig,
    cross_play: CrossPlayReport,
    mean_switches: f64,
    offline_end_accuracy: f64,
    online_end_accuracy: f64,
    offline_curve: Vec<(u32, f64)>,
    online_curve: Vec<(u32, f64)>,
}

fn online_eval(a: OnlineEvalArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.config)?;
    let library = library_for(&cfg, &a.library)?;
    let model = load_model(&a.model)?;
    let sc = &cfg.config;
    let sampler = sc.sampler();
    let mut controller = sc.controller;
    if let Some(theta) = a.theta {
        controller.theta = theta;
    }
    if let Some(dwell) = a.dwell {
        controller.dwell = dwell;
    }
    let seeds = cell_seeds(a.seed, a.episodes);
    let mut rows = Vec::new();
    let mut online = Vec::new();
    for e in 0..library.levels() {
        let evader = library.evader(e).expect("complete library");
        let runs =
            play_online_logs(&cfg.arena, &library, &model, evader, &sampler, sc.reward, &seeds, controller, &cfg.hash)?;
        let logs: Vec<EpisodeLog> = runs.iter().map(|(l, _)| l.clone()).collect();
        rows.push(LevelMetrics { evader_level: e, metrics: compute_metrics(&logs)? });
        online.push(runs);
    }
    if let Some(dir) = &a.logs {
        for (e, runs) in online.iter().enumerate() {
            let logs: Vec<EpisodeLog> = runs.iter().map(|(l, _)| l.clone()).collect();
            write_logs(&dir.join(format!("evader_L{e}")), &logs)?;
        }
    }
    let doc = MetricsDocument { config_hash: cfg.hash.clone(), seed: a.seed, episodes_per_level: a.episodes, rows };
    write_json(&a.out, &doc)?;
    print!("{}", metrics_table("online", &doc));
    if let Some(path) = &a.report {
        let report = online_report(&cfg, &library, &model, controller, a.seed, &seeds, &online)?;
        write_json(path, &report)?;
        print!("{}", report.cross_play.to_table());
        println!(
            "classifier end accuracy: offline {:.3}, online {:.3}",
            report.offline_end_accuracy, report.online_end_accuracy
        );
    }
    Ok(())
}

fn online_report(
    cfg: &LoadedConfig,
    library: &LevelLibrary,
    model: &ClassifierModel,
    controller: ControllerConfig,
    seed: u64,
    seeds: &[u64],
    online: &[Vec<(EpisodeLog, peg_core::online::ControllerState)>],
) -> Result<OnlineReport, CliError> {
    let sc = &cfg.config;
    let sampler = sc.sampler();
    let mut offline_logs = Vec::new();
    for p in 0..library.levels() {
        for e in 0..library.levels() {
            let logs = play_logs(
                &cfg.arena,
                library.pursuers(p).expect("complete library"),
                library.evader(e).expect("complete library"),
                &sampler,
                sc.reward,
                seeds,
                &cfg.hash,
            )?;
            offline_logs.extend(logs.into_iter().map(|l| (l, e)));
        }
    }
    let online_logs: Vec<(EpisodeLog, u32)> = online
        .iter()
        .enumerate()
        .flat_map(|(e, runs)| runs.iter().map(move |(l, _)| (l.clone(), e as u32)))
        .collect();
    let run_online = |e: u32, _: &[u64]| -> Result<Vec<EpisodeLog>, EvalError> {
        Ok(online[e as usize].iter().map(|(l, _)| l.clone()).collect())
    };
    let matrix = cross_play(&cfg.arena, library, &sampler, sc.reward, seeds.len(), seed, Some(&run_online))?;
    let offline = label_logs(&offline_logs, &cfg.arena)?;
    let online_labeled = label_logs(&online_logs, &cfg.arena)?;
    let switches: u32 = online.iter().flatten().map(|(_, c)| c.switches).sum();
    Ok(OnlineReport {
        controller,
        cross_play: matrix,
        mean_switches: switches as f64 / online_logs.len().max(1) as f64,
        offline_end_accuracy: end_accuracy(model, offline.iter()),
        online_end_accuracy: end_accuracy(model, online_labeled.iter()),
        offline_curve: classification_rate_curve(model, offline.iter()),
        online_curve: classification_rate_curve(model, online_labeled.iter()),
    })
}

fn replay(a: ReplayArgs) -> Result<(), CliError> {
    let map = load_map_file(&a.map)?;
    let file = fs::File::open(&a.log).map_err(|source| CliError::File { path: a.log.clone(), source })?;
    let log = deserialize_log(BufReader::new(file)).map_err(|source| CliError::Log { path: a.log.clone(), source })?;
    let frames = render_replay(&log, &map)?;
    match (a.format, &a.out) {
        (FrameFormat::Text, None) => {
            for f in &frames {
                println!("{}", f.to_text(&map));
            }
        }
        (FrameFormat::Text, Some(dir)) => {
            for f in &frames {
                write_file(&dir.join(format!("frame_{:04}.txt", f.t)), f.to_text(&map).as_bytes())?;
            }
        }
        (FrameFormat::Png, None) => return Err(CliError::Usage("--format png requires --out".into())),
        (FrameFormat::Png, Some(dir)) => {
            fs::create_dir_all(dir).map_err(|source| CliError::File { path: dir.clone(), source })?;
            for f in &frames {
                let path = dir.join(format!("frame_{:04}.png", f.t));
                f.to_image(&map, a.scale).save(&path).map_err(|e| CliError::Image(format!("{}: {e}", path.display())))?;
            }
        }
    }
    if a.out.is_some() {
        println!("{} frames", frames.len());
    }
    Ok(())
}

fn validate_map(a: ValidateMapArgs) -> Result<(), CliError> {
    let map = load_map_file(&a.path)?;
    println!(
        "ok width={} height={} accessible={} hash={}",
        map.width(),
        map.height(),
        map.accessible_count(),
        map.hash_hex()
    );
    Ok(())
}
