//! Congestion-control fairness laboratory.
//!
//! A shared-bottleneck simulator driven once per monitor interval (MI), an
//! Aurora-style reinforcement-learning rate controller trained with PPO,
//! a fluid TCP CUBIC baseline, three fairness strategies, and the metrics and
//! evaluation protocols used to compare them.
//!
//! The crate is organised bottom-up:
//!
//! - [`sim`]: link configuration, the FIFO bottleneck, and the rate-action rule.
//! - [`features`]: per-MI features and policy observations.
//! - [`reward`]: the base reward and the fairness shaping terms.
//! - [`cubic`]: the classical baseline controller.
//! - [`policy`]: MLP networks, PPO, training, and checkpoints.
//! - [`metrics`]: Jain's index, Harm, utilization, and report aggregation.
//! - [`scenarios`]: single-flow trace, staggered duel, mixed CUBIC, dynamic entry/exit.
//! - [`experiment`]: checkpoint cache, sweeps, and manifests.

pub mod cubic;
pub mod error;
pub mod experiment;
pub mod features;
pub mod metrics;
pub mod policy;
pub mod reward;
pub mod scenarios;
pub mod sim;

pub use error::{Error, Result};
pub use features::{FeatureHistory, MiFeatures, Observation};
pub use metrics::{FairnessReport, TraceResult};
pub use policy::checkpoint::PolicyCheckpoint;
pub use policy::train::{Strategy, TrainConfig};
pub use reward::RewardConfig;
pub use scenarios::{Controller, DynamicTrace, ScenarioConfig};
pub use sim::{LinkConfig, MonitorReport, Network, RateActionConfig};
