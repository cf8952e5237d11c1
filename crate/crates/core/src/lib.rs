//! Training lightweight classifier heads on frozen embeddings against either
//! the full annotator label distribution (soft) or its majority vote (hard),
//! and measuring how well predictive uncertainty tracks annotator
//! disagreement.

pub mod cli;
pub mod data;
mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod stats;
pub mod targets;
pub mod trainer;

pub use error::{Error, Result};
pub use metrics::{accuracy, entropy, kl_divergence, pearson, AlignmentSummary};
pub use targets::{hard_target, majority_class, soft_target, LabelDistribution};
pub use trainer::{train, LabelMode, Scheduler, TrainConfig, TrainResult};
