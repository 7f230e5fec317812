//! A small query-based instance segmentation model.
//!
//! Points pass through a two-layer point-wise network to `d`-dim features.
//! Each of the `Q` queries owns a mask embedding (mask logit = feature · embedding)
//! and a learnable query vector fed to a shared affine class head over the
//! known classes plus a trailing no-object entry.

pub mod loss;
pub mod matching;
pub mod network;
pub mod train;

pub use loss::{compute_loss, unweighted_loss, LossConfig, LossValue};
pub use matching::{hungarian_match, solve_assignment, Assignment, MatchWeights};
pub use network::{Model, Params, PredictionSet, PARAM_NAMES};
pub use train::{loss_and_gradient, train_step, StepReport};
