//! Persistence: policy documents, library directories, classifier models and
//! the human-editable scenario configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::arena::Arena;
use crate::classifier::ClassifierModel;
use crate::map::{load_map, Cell, GridMap, MapError};
use crate::online::ControllerConfig;
use crate::policy::{feature_schema_hash, Policy};
use crate::training::learner::TrainConfig;
use crate::training::library::{LevelLibrary, LibraryEntry, Provenance};
use crate::training::rollout::RewardSpec;
use crate::training::scenario::{SamplerSpec, Scenario};
use crate::visibility::FovConfig;

pub const POLICY_DOC_VERSION: u32 = 1;
pub const LIBRARY_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("{path}: document version {found} is not supported (expected {expected})")]
    VersionMismatch { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: feature schema {found} does not match runtime schema {expected}")]
    SchemaMismatch { path: PathBuf, found: String, expected: String },
    #[error("{path}: {source}")]
    Map { path: PathBuf, source: MapError },
    #[error("invalid scenario config: {0}")]
    Config(String),
}

fn read(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Io { path: path.to_path_buf(), source })
}

fn write(path: &Path, contents: &str) -> Result<(), IoError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| IoError::Io { path: parent.to_path_buf(), source })?;
    }
    fs::write(path, contents).map_err(|source| IoError::Io { path: path.to_path_buf(), source })
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T, IoError> {
    serde_json::from_str(text).map_err(|e| IoError::Parse { path: path.to_path_buf(), reason: e.to_string() })
}

/// Reads the `version` field before the strict parse, so that documents from
/// another version report that rather than a field error.
fn check_version(path: &Path, text: &str, expected: u32) -> Result<(), IoError> {
    let value: serde_json::Value = parse_json(path, text)?;
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == expected as u64 => Ok(()),
        Some(v) => Err(IoError::VersionMismatch { path: path.to_path_buf(), found: v as u32, expected }),
        None => Err(IoError::Parse { path: path.to_path_buf(), reason: "missing version".into() }),
    }
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("document serialises");
    s.push('\n');
    s
}

pub fn load_map_file(path: &Path) -> Result<GridMap, IoError> {
    load_map(&read(path)?).map_err(|source| IoError::Map { path: path.to_path_buf(), source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDocument {
    pub version: u32,
    pub feature_schema: String,
    pub policy: Policy,
    pub provenance: Provenance,
}

pub fn save_policy(path: &Path, entry: &LibraryEntry) -> Result<(), IoError> {
    let doc = PolicyDocument {
        version: POLICY_DOC_VERSION,
        feature_schema: feature_schema_hash(),
        policy: entry.policy.clone(),
        provenance: entry.provenance.clone(),
    };
    write(path, &to_pretty_json(&doc))
}

pub fn load_policy(path: &Path) -> Result<LibraryEntry, IoError> {
    let text = read(path)?;
    check_version(path, &text, POLICY_DOC_VERSION)?;
    let doc: PolicyDocument = parse_json(path, &text)?;
    let expected = feature_schema_hash();
    if doc.feature_schema != expected {
        return Err(IoError::SchemaMismatch { path: path.to_path_buf(), found: doc.feature_schema, expected });
    }
    Ok(LibraryEntry { policy: doc.policy, provenance: doc.provenance })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryManifest {
    pub version: u32,
    pub k: u32,
    pub config_hash: String,
    pub seed: u64,
    pub map_hash: String,
    pub evaders: Vec<String>,
    pub pursuer_pairs: Vec<String>,
}

/// Writes `manifest.json` plus one policy document per entry.
pub fn save_library(dir: &Path, library: &LevelLibrary, seed: u64, map_hash: &str) -> Result<(), IoError> {
    let mut manifest = LibraryManifest {
        version: LIBRARY_VERSION,
        k: library.k,
        config_hash: library.evaders[0].provenance.config_hash.clone(),
        seed,
        map_hash: map_hash.to_string(),
        evaders: Vec::new(),
        pursuer_pairs: Vec::new(),
    };
    for (i, e) in library.evaders.iter().enumerate() {
        let name = format!("evader_L{i}.json");
        save_policy(&dir.join(&name), e)?;
        manifest.evaders.push(name);
    }
    for (i, e) in library.pursuer_pairs.iter().enumerate() {
        let name = format!("pursuers_L{i}.json");
        save_policy(&dir.join(&name), e)?;
        manifest.pursuer_pairs.push(name);
    }
    write(&dir.join(MANIFEST_FILE), &to_pretty_json(&manifest))
}

pub fn load_library(dir: &Path) -> Result<(LevelLibrary, LibraryManifest), IoError> {
    let path = dir.join(MANIFEST_FILE);
    let text = read(&path)?;
    check_version(&path, &text, LIBRARY_VERSION)?;
    let manifest: LibraryManifest = parse_json(&path, &text)?;
    let levels = manifest.k as usize + 1;
    if manifest.evaders.len() != levels || manifest.pursuer_pairs.len() != levels {
        return Err(IoError::Parse { path, reason: format!("expected {levels} entries per side") });
    }
    let load_all = |names: &[String]| -> Result<Vec<LibraryEntry>, IoError> {
        names.iter().map(|n| load_policy(&dir.join(n))).collect()
    };
    let library =
        LevelLibrary { k: manifest.k, evaders: load_all(&manifest.evaders)?, pursuer_pairs: load_all(&manifest.pursuer_pairs)? };
    Ok((library, manifest))
}

pub fn save_model(path: &Path, model: &ClassifierModel) -> Result<(), IoError> {
    write(path, &to_pretty_json(model))
}

/// Loads a classifier model, refusing models built for another feature
/// schema.
pub fn load_model(path: &Path) -> Result<ClassifierModel, IoError> {
    let text = read(path)?;
    check_version(path, &text, crate::classifier::MODEL_VERSION)?;
    let model: ClassifierModel = parse_json(path, &text)?;
    model.check_schema().map_err(|_| IoError::SchemaMismatch {
        path: path.to_path_buf(),
        found: model.schema_hash.clone(),
        expected: crate::classifier::classifier_schema_hash(),
    })?;
    Ok(model)
}

/// Start placement: either fixed cells or the random sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpawnSpec {
    Sampler(SamplerSpec),
    Fixed(Scenario),
}

impl Default for SpawnSpec {
    fn default() -> Self {
        SpawnSpec::Sampler(SamplerSpec::default())
    }
}

/// Experiment configuration, stored as TOML. Paths are relative to the
/// config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub map: PathBuf,
    #[serde(default = "default_horizon")]
    pub horizon: u32,
    #[serde(default)]
    pub fov: FovConfig,
    #[serde(default)]
    pub spawn: SpawnSpec,
    #[serde(default)]
    pub reward: RewardSpec,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub training: TrainingSection,
}

fn default_horizon() -> u32 {
    crate::game::DEFAULT_HORIZON
}

/// Training hyperparameters; the seed always comes from the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub iterations: u32,
    pub episodes_per_iteration: u32,
    pub learning_rate: f64,
    pub discount: f64,
    pub trace_decay: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub validation_episodes: u32,
    pub evaluation_episodes: u32,
    pub init_scale: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            iterations: d.iterations,
            episodes_per_iteration: d.episodes_per_iteration,
            learning_rate: d.learning_rate,
            discount: d.discount,
            trace_decay: d.trace_decay,
            epsilon_start: d.epsilon_start,
            epsilon_end: d.epsilon_end,
            validation_episodes: d.validation_episodes,
            evaluation_episodes: d.evaluation_episodes,
            init_scale: d.init_scale,
        }
    }
}

/// A loaded configuration with its map.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ScenarioConfig,
    pub arena: Arena,
    /// Hash of the config text and the map text.
    pub hash: String,
}

impl ScenarioConfig {
    pub fn sampler(&self) -> SamplerSpec {
        match &self.spawn {
            SpawnSpec::Sampler(s) => *s,
            SpawnSpec::Fixed(s) => SamplerSpec { fixed: Some(*s), ..SamplerSpec::default() },
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            iterations: t.iterations,
            episodes_per_iteration: t.episodes_per_iteration,
            learning_rate: t.learning_rate,
            discount: t.discount,
            trace_decay: t.trace_decay,
            epsilon_start: t.epsilon_start,
            epsilon_end: t.epsilon_end,
            validation_episodes: t.validation_episodes,
            evaluation_episodes: t.evaluation_episodes,
            init_scale: t.init_scale,
            seed,
            sampler: self.sampler(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, IoError> {
    toml::from_str(text).map_err(|e| IoError::Config(e.to_string().replace('\n', " ")))
}

/// Loads a config and its map, and validates fixed spawns.
pub fn load_config(path: &Path) -> Result<LoadedConfig, IoError> {
    let text = read(path)?;
    let config = parse_config(&text)?;
    let map_path = path.parent().unwrap_or(Path::new(".")).join(&config.map);
    let map_text = read(&map_path)?;
    let map = load_map(&map_text).map_err(|source| IoError::Map { path: map_path.clone(), source })?;
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    h.update(map_text.as_bytes());
    let hash = hex::encode(&h.finalize()[..8]);
    let arena = Arena::new(map, config.fov, config.horizon);
    if let SpawnSpec::Fixed(s) = &config.spawn {
        validate_fixed(&arena, s)?;
    }
    if !config.reward.terminal_dominates(config.horizon) {
        return Err(IoError::Config("terminal rewards must dominate shaping over the horizon".into()));
    }
    Ok(LoadedConfig { config, arena, hash })
}

fn validate_fixed(arena: &Arena, s: &Scenario) -> Result<(), IoError> {
    let bad = |what: &str, c: Cell| Err(IoError::Config(format!("{what} {c} is not valid for its role")));
    let map = arena.map();
    if !map.in_bounds(s.hlp_start) {
        return bad("hlp_start", s.hlp_start);
    }
    for (what, c) in [("llp_start", s.llp_start), ("evader_start", s.evader_start), ("evader_goal", s.evader_goal)] {
        if !map.is_accessible(c) {
            return bad(what, c);
        }
    }
    if s.evader_goal == s.evader_start {
        return Err(IoError::Config("evader_goal equals evader_start".into()));
    }
    Ok(())
}
