//! Continual-learning mechanisms and the phase orchestrator.

pub mod exemplar;
pub mod frequency;
pub mod phase;
pub mod pseudo;
pub mod scenario;
pub mod targets;

pub use exemplar::{select_exemplars, ExemplarEntry, ExemplarStore};
pub use frequency::{accumulate_frequencies, compute_class_weights, FrequencyTable, WeightRange, WeightTable};
pub use phase::{
    run_phase, ContinualConfig, ContinualState, EpochStats, Mechanisms, PhaseInput, PhaseResult,
    TrainingConfig,
};
pub use pseudo::{
    generate_pseudo_labels, reweight_and_select, select_pseudo_labels, PseudoCandidates, PseudoItem,
    PseudoLabelSet, PseudoOrigin,
};
pub use scenario::{run_remaining_phases, run_scenario};
pub use targets::{build_supervision, AugmentedTargets, Target, TargetOrigin};
