//! Offline phase: rollouts, best-response learning and the level library.

pub mod learner;
pub mod library;
pub mod rollout;
pub mod scenario;

pub use learner::{optimize_policy, TrainConfig, TrainError, TrainReport};
pub use rollout::{rollout, Episode, EpisodeOutcome, Recording, RewardSpec, RolloutError};
pub use scenario::{SamplerSpec, Scenario};
