//! Learns a generative sampler over decision trees whose sampling probability
//! is proportional to the Bayesian posterior of each tree given tabular data.
//!
//! The pipeline: [`data`] prepares feature matrices, [`tree`] defines the
//! sequential tree-construction process and its action masks, [`reward`]
//! scores terminal trees with an exact Dirichlet-multinomial posterior,
//! [`policy`] is a small neural sampler with hand-verified gradients,
//! [`training`] fits it with a trajectory-balance objective, [`inference`]
//! turns samples into single-tree or model-averaged predictors, and
//! [`oracle`] enumerates small instances exactly to verify the sampler.
//!
//! The crate is `no_std`-compatible (requires `alloc`); the `std` feature
//! (default) only widens error-trait integration and RNG conveniences.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod inference;
pub mod math;
pub mod oracle;
pub mod policy;
pub mod reward;
pub mod training;
pub mod tree;

pub use data::{Dataset, ShiftSpec, SplitSpec};
pub use error::{Error, Result};
pub use inference::{Ensemble, EvalReport, LeafParamMode};
pub use policy::{ActionDistribution, PolicyConfig, PolicyModel, Trajectory};
pub use reward::RewardParams;
pub use training::{ReplayBuffer, StepMetrics, TrainConfig};
pub use tree::{Action, ActionMask, DecisionRule, LeafStats, NodeSlot, TreeState};

use rand_chacha::ChaCha8Rng;

/// Deterministic RNG used across the crate; one seed pins a whole run.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}
