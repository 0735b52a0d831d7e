//! The level-k library: alternating best responses starting from the
//! heuristic evader.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::arena::Arena;
use crate::policy::{Policy, Scope};
use crate::rng::derive_seed;
use crate::training::learner::{optimize_policy, TrainConfig, TrainError, TrainReport};
use crate::training::rollout::RewardSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    /// Identity of the frozen opponent this entry best-responds to.
    pub opponent: Option<String>,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub report: Option<TrainReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryEntry {
    pub policy: Policy,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelLibrary {
    pub k: u32,
    pub evaders: Vec<LibraryEntry>,
    pub pursuer_pairs: Vec<LibraryEntry>,
}

#[derive(Debug, Error)]
#[error("training {scope:?} level {level}: {source}")]
pub struct LibraryError {
    pub level: u32,
    pub scope: Scope,
    #[source]
    pub source: TrainError,
}

/// Stable hash of everything that determines a library build.
pub fn training_config_hash(arena: &Arena, reward: &RewardSpec, config: &TrainConfig) -> String {
    let doc = serde_json::json!({
        "map": arena.map().hash_hex(),
        "horizon": arena.horizon,
        "fov": arena.fov,
        "reward": reward,
        "config": config,
        "features": crate::policy::feature_schema_hash(),
    });
    hex::encode(&Sha256::digest(doc.to_string().as_bytes())[..8])
}

impl LevelLibrary {
    pub fn evader(&self, level: u32) -> Option<&Policy> {
        self.evaders.get(level as usize).map(|e| &e.policy)
    }

    pub fn pursuers(&self, level: u32) -> Option<&Policy> {
        self.pursuer_pairs.get(level as usize).map(|e| &e.policy)
    }

    pub fn levels(&self) -> u32 {
        self.k + 1
    }
}

/// Seed of the training run for one library entry.
pub fn entry_seed(master: u64, scope: Scope, level: u32) -> u64 {
    let tag = match scope {
        Scope::PursuerPair => 0,
        Scope::Evader => 1,
    };
    derive_seed(master, &[tag, level as u64])
}

/// Builds levels `0..=k`. `config.seed` is the master seed; each entry trains
/// with its own derived seed.
pub fn build_level_library(
    arena: &Arena,
    k: u32,
    reward: RewardSpec,
    config: &TrainConfig,
) -> Result<LevelLibrary, LibraryError> {
    let config_hash = training_config_hash(arena, &reward, config);
    let mut evaders = vec![LibraryEntry {
        policy: Policy::level0_evader(),
        provenance: Provenance { opponent: None, config_hash: config_hash.clone(), seed: None, report: None },
    }];
    let mut pursuer_pairs: Vec<LibraryEntry> = Vec::new();
    for level in 0..=k {
        if level > 0 {
            let opponent = &pursuer_pairs[level as usize - 1].policy;
            let seed = entry_seed(config.seed, Scope::Evader, level);
            let cfg = TrainConfig { seed, ..config.clone() };
            let (policy, report) = optimize_policy(arena, Scope::Evader, level, opponent, reward, &cfg)
                .map_err(|source| LibraryError { level, scope: Scope::Evader, source })?;
            evaders.push(LibraryEntry {
                policy,
                provenance: Provenance {
                    opponent: Some(opponent.identity()),
                    config_hash: config_hash.clone(),
                    seed: Some(seed),
                    report: Some(report),
                },
            });
        }
        let opponent = &evaders[level as usize].policy;
        let seed = entry_seed(config.seed, Scope::PursuerPair, level);
        let cfg = TrainConfig { seed, ..config.clone() };
        let (policy, report) = optimize_policy(arena, Scope::PursuerPair, level, opponent, reward, &cfg)
            .map_err(|source| LibraryError { level, scope: Scope::PursuerPair, source })?;
        pursuer_pairs.push(LibraryEntry {
            policy,
            provenance: Provenance {
                opponent: Some(opponent.identity()),
                config_hash: config_hash.clone(),
                seed: Some(seed),
                report: Some(report),
            },
        });
    }
    Ok(LevelLibrary { k, evaders, pursuer_pairs })
}
