//! Pursuit-evasion on occluded grids with a heterogeneous two-pursuer team.
//!
//! The crate contains the simulator (`map`, `game`, `visibility`), history
//! summaries and policies (`policy`), offline level-k training (`training`),
//! the evader-level classifier (`classifier`), the online policy-switching
//! controller (`online`), metrics (`evaluation`) and persistence (`io`).

pub mod game;
pub mod map;
pub mod visibility;
pub mod arena;
pub mod paths;
pub mod policy;
pub mod rng;
pub mod log;
pub mod training;
pub mod evaluation;
pub mod classifier;
pub mod online;
pub mod io;
pub mod replay;
