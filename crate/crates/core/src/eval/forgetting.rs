use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::report::PhaseHistory;
use crate::types::ClassId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FppMetric {
    Map25,
    Map50,
}

/// Forgetting in percentage points: the first-phase-class metric after the
/// first phase minus the same quantity after the last phase, times 100.
pub fn fpp(
    history: &PhaseHistory,
    first_phase_classes: &BTreeSet<ClassId>,
    metric: FppMetric,
) -> Result<f64> {
    if history.len() < 2 {
        return Err(Error::MissingPhase(format!(
            "forgetting needs at least 2 phases, history has {}",
            history.len()
        )));
    }
    let value = |idx: usize| -> Result<f64> {
        let (phase, report) = &history.entries[idx];
        let mean = report.restricted(first_phase_classes);
        match metric {
            FppMetric::Map25 => mean.map25,
            FppMetric::Map50 => mean.map50,
        }
        .ok_or_else(|| Error::MissingPhase(format!("no first-phase class is evaluable at phase {phase}")))
    };
    let first = value(0)?;
    let last = value(history.len() - 1)?;
    Ok(100.0 * (first - last))
}
