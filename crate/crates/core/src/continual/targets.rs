//! Supervision targets assembled from ground truth and pseudo-labels.

use serde::{Deserialize, Serialize};

use std::collections::BTreeSet;

use crate::continual::pseudo::{PseudoItem, PseudoLabelSet};
use crate::mask::BitMask;
use crate::types::{ClassId, InstanceLabel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetOrigin {
    Gt,
    Plg,
    Cbr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub mask: BitMask,
    pub class_id: ClassId,
    pub origin: TargetOrigin,
    /// Frozen-model query that produced a pseudo-label.
    pub source_query: Option<usize>,
}

/// Supervision for one scene: ground truth, then PLG, then CBR items.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentedTargets {
    pub items: Vec<Target>,
}

impl AugmentedTargets {
    pub fn from_gt(gt: &[InstanceLabel]) -> Self {
        Self {
            items: gt
                .iter()
                .map(|l| Target {
                    mask: l.mask.clone(),
                    class_id: l.class_id,
                    origin: TargetOrigin::Gt,
                    source_query: None,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn count(&self, origin: TargetOrigin) -> usize {
        self.items.iter().filter(|t| t.origin == origin).count()
    }
}

/// Concatenates `gt ‖ plg ‖ cbr`, dropping CBR items whose source query is
/// already among the PLG items.
pub fn build_supervision(
    gt: &[InstanceLabel],
    plg: &PseudoLabelSet,
    cbr: &PseudoLabelSet,
) -> AugmentedTargets {
    let mut out = AugmentedTargets::from_gt(gt);
    let to_target = |p: &PseudoItem, origin| Target {
        mask: p.mask.clone(),
        class_id: p.class_id,
        origin,
        source_query: Some(p.source_query),
    };
    out.items
        .extend(plg.items.iter().map(|p| to_target(p, TargetOrigin::Plg)));
    let taken: BTreeSet<usize> = plg.items.iter().map(|p| p.source_query).collect();
    out.items.extend(
        cbr.items
            .iter()
            .filter(|p| !taken.contains(&p.source_query))
            .map(|p| to_target(p, TargetOrigin::Cbr)),
    );
    out
}
