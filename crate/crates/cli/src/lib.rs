//! Configuration, orchestration and report emission for climb3d runs.

pub mod commands;
pub mod config;
pub mod output;
pub mod summary;

pub use commands::{cmd_eval, cmd_gen, cmd_run, cmd_splits, RunOutcome};
pub use config::{RunConfig, ScenarioConfig};
