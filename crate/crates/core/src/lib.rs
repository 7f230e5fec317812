//! Class-incremental, imbalance-aware instance segmentation on synthetic
//! point clouds.
//!
//! The crate covers the data model ([`types`]), a synthetic scene generator
//! ([`scenegen`]), incremental scenarios ([`splits`]), a small query-based
//! segmentation model ([`model`]), the continual-learning mechanisms
//! ([`continual`]) and the evaluation harness ([`eval`]).

pub mod continual;
pub mod error;
pub mod eval;
pub mod mask;
pub mod model;
pub mod scenegen;
pub mod splits;
pub mod types;

pub use error::{Error, Result};
pub use mask::BitMask;
pub use types::{validate_scene, ClassCatalog, ClassId, Dataset, InstanceLabel, Point, Scene};
