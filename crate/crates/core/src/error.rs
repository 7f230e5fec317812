use thiserror::Error;

use crate::types::ClassId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("scene generation failed for scene {scene_index}: {reason}")]
    Generation { scene_index: usize, reason: String },

    #[error("non-finite value in {layer}")]
    NumericFault { layer: &'static str },

    #[error("{targets} targets exceed the {queries} available queries")]
    Capacity { targets: usize, queries: usize },

    #[error("no weight or head entry for class {0}")]
    UnknownClass(ClassId),

    #[error("class {0} is outside the current class range")]
    OutOfRange(ClassId),

    #[error("mask length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("missing phase entry: {0}")]
    MissingPhase(String),

    #[error("invalid scene {scene_id}: {violations:?}")]
    InvalidScene {
        scene_id: String,
        violations: Vec<String>,
    },

    #[error("checkpoint load failed: {0}")]
    Checkpoint(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
