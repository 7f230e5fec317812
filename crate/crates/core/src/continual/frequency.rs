//! Class-frequency statistics and inverse-frequency weights.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::continual::pseudo::PseudoLabelSet;
use crate::error::{Error, Result};
use crate::types::{ClassId, InstanceLabel};

/// Instance counts `f(c)` over all classes seen so far.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub counts: BTreeMap<ClassId, f64>,
    /// Classes from earlier phases; the rest belong to the current phase.
    pub old_classes: BTreeSet<ClassId>,
    pub epoch_index: usize,
}

impl FrequencyTable {
    pub fn new(old_classes: &BTreeSet<ClassId>, current_classes: &BTreeSet<ClassId>) -> Self {
        Self {
            counts: old_classes.iter().chain(current_classes).map(|&c| (c, 0.0)).collect(),
            old_classes: old_classes.clone(),
            epoch_index: 0,
        }
    }

    /// Zeroes every count and advances the epoch index.
    pub fn reset(&mut self) {
        self.counts.values_mut().for_each(|v| *v = 0.0);
        self.epoch_index += 1;
    }

    pub fn total(&self) -> f64 {
        self.counts.values().sum()
    }

    fn bump(&mut self, class: ClassId) -> Result<()> {
        *self.counts.get_mut(&class).ok_or(Error::OutOfRange(class))? += 1.0;
        Ok(())
    }
}

/// Adds one count per pseudo-label and per ground-truth instance. Fails
/// without modifying the table if any class is out of range.
pub fn accumulate_frequencies(
    table: &mut FrequencyTable,
    pseudo: &PseudoLabelSet,
    gt_labels: &[InstanceLabel],
) -> Result<()> {
    let classes: Vec<ClassId> = pseudo
        .items
        .iter()
        .map(|p| p.class_id)
        .chain(gt_labels.iter().map(|l| l.class_id))
        .collect();
    if let Some(&bad) = classes.iter().find(|c| !table.counts.contains_key(c)) {
        return Err(Error::OutOfRange(bad));
    }
    for c in classes {
        table.bump(c)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRange {
    OldOnly,
    AllSeen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub weights: BTreeMap<ClassId, f64>,
    pub epsilon: f64,
}

impl WeightTable {
    pub fn uniform(classes: impl IntoIterator<Item = ClassId>) -> Self {
        Self {
            weights: classes.into_iter().map(|c| (c, 1.0)).collect(),
            epsilon: 0.0,
        }
    }

    pub fn get(&self, class: ClassId) -> Result<f64> {
        self.weights.get(&class).copied().ok_or(Error::UnknownClass(class))
    }

    /// Rescales so the weights average to 1.
    pub fn normalized_to_mean_one(&self) -> Self {
        let n = self.weights.len();
        if n == 0 {
            return self.clone();
        }
        let mean = self.weights.values().sum::<f64>() / n as f64;
        Self {
            weights: self.weights.iter().map(|(&c, &w)| (c, w / mean)).collect(),
            epsilon: self.epsilon,
        }
    }
}

/// `w(c) = min(1 / (f(c) + epsilon), weight_cap)` over the requested range.
pub fn compute_class_weights(
    table: &FrequencyTable,
    epsilon: f64,
    range: WeightRange,
    weight_cap: f64,
) -> Result<WeightTable> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(weight_cap > 0.0) {
        return Err(Error::Config(format!("weight_cap must be positive, got {weight_cap}")));
    }
    let weights = table
        .counts
        .iter()
        .filter(|(c, _)| range == WeightRange::AllSeen || table.old_classes.contains(c))
        .map(|(&c, &f)| (c, (1.0 / (f + epsilon)).min(weight_cap)))
        .collect();
    Ok(WeightTable { weights, epsilon })
}
