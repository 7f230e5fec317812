//! Average precision with greedy score-ordered matching and all-points
//! interpolation.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mask::BitMask;
use crate::types::ClassId;

/// `|a ∩ b| / |a ∪ b|`, zero when both masks are empty.
pub fn mask_iou(a: &BitMask, b: &BitMask) -> Result<f64> {
    let union = a.union_count(b)?;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(a.intersection_count(b)? as f64 / union as f64)
}

/// One detection on scene `scene` of an evaluation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub scene: usize,
    pub mask: BitMask,
    pub class_id: ClassId,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scene: usize,
    pub mask: BitMask,
    pub class_id: ClassId,
}

/// Slack for comparing an IoU against a decimal threshold such as 0.55.
const IOU_SLACK: f64 = 1e-12;

/// True-positive flags for the detections of `class_id`, in ranked order.
pub fn match_detections(
    detections: &[Detection],
    gt: &[GroundTruth],
    class_id: ClassId,
    iou_threshold: f64,
) -> Result<Vec<bool>> {
    let mut ranked: Vec<&Detection> = detections.iter().filter(|d| d.class_id == class_id).collect();
    // Stable: equal scores keep input order.
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    let candidates: Vec<&GroundTruth> = gt.iter().filter(|g| g.class_id == class_id).collect();
    let mut used = vec![false; candidates.len()];
    let mut flags = Vec::with_capacity(ranked.len());
    for det in ranked {
        let mut best: Option<(usize, f64)> = None;
        for (k, g) in candidates.iter().enumerate() {
            if used[k] || g.scene != det.scene {
                continue;
            }
            let iou = mask_iou(&det.mask, &g.mask)?;
            if iou + IOU_SLACK >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((k, iou));
            }
        }
        match best {
            Some((k, _)) => {
                used[k] = true;
                flags.push(true);
            }
            None => flags.push(false),
        }
    }
    Ok(flags)
}

/// Area under the interpolated precision-recall curve for a ranked TP/FP
/// sequence against `num_gt` ground-truth instances.
pub fn ap_from_flags(flags: &[bool], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut precision = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (rank, &hit) in flags.iter().enumerate() {
        tp += usize::from(hit);
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    // Interpolate: precision at a rank is the best precision at any later rank.
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    // Recall grows by 1/num_gt exactly at each true positive.
    let sum: f64 = flags
        .iter()
        .zip(&precision)
        .filter(|(hit, _)| **hit)
        .map(|(_, p)| *p)
        .sum();
    Some(sum / num_gt as f64)
}

/// AP of one class at one IoU threshold; `None` when the class has no GT.
pub fn average_precision(
    detections: &[Detection],
    gt: &[GroundTruth],
    class_id: ClassId,
    iou_threshold: f64,
) -> Result<Option<f64>> {
    let num_gt = gt.iter().filter(|g| g.class_id == class_id).count();
    if num_gt == 0 {
        return Ok(None);
    }
    let flags = match_detections(detections, gt, class_id, iou_threshold)?;
    Ok(ap_from_flags(&flags, num_gt))
}

/// Thresholds evaluated per class: 0.25, then 0.50 to 0.95 in steps of 0.05.
pub fn standard_thresholds() -> Vec<f64> {
    let mut t = vec![0.25];
    t.extend((0..10).map(|i| (50 + 5 * i) as f64 / 100.0));
    t
}

/// Per-class AP at each of [`standard_thresholds`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class_id: ClassId,
    pub gt_instances: usize,
    pub ap_at: Vec<Option<f64>>,
}

impl ClassAp {
    pub fn ap25(&self) -> Option<f64> {
        self.ap_at[0]
    }

    pub fn ap50(&self) -> Option<f64> {
        self.ap_at[1]
    }

    /// Mean over the ten thresholds 0.50..0.95.
    pub fn ap(&self) -> Option<f64> {
        let vals: Option<Vec<f64>> = self.ap_at[1..].iter().copied().collect();
        vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }
}

pub fn class_ap_table(
    detections: &[Detection],
    gt: &[GroundTruth],
    classes: impl IntoIterator<Item = ClassId>,
) -> Result<Vec<ClassAp>> {
    let thresholds = standard_thresholds();
    classes
        .into_iter()
        .map(|class_id| {
            let gt_instances = gt.iter().filter(|g| g.class_id == class_id).count();
            let ap_at = thresholds
                .iter()
                .map(|&t| average_precision(detections, gt, class_id, t))
                .collect::<Result<Vec<_>>>()?;
            Ok(ClassAp {
                class_id,
                gt_instances,
                ap_at,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanAp {
    pub map25: Option<f64>,
    pub map50: Option<f64>,
    pub map: Option<f64>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    if present.is_empty() {
        None
    } else {
        Some(present.iter().sum::<f64>() / present.len() as f64)
    }
}

/// Unweighted class means; classes without GT are skipped and an empty
/// selection yields `None` rather than zero.
pub fn mean_ap<'a>(reports: impl IntoIterator<Item = &'a ClassAp>) -> MeanAp {
    let rows: Vec<&ClassAp> = reports.into_iter().filter(|r| r.gt_instances > 0).collect();
    MeanAp {
        map25: mean_of(rows.iter().map(|r| r.ap25())),
        map50: mean_of(rows.iter().map(|r| r.ap50())),
        map: mean_of(rows.iter().map(|r| r.ap())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(s: &str) -> BitMask {
        BitMask::from_bit_str(s)
    }

    #[test]
    fn iou_basics() {
        assert_eq!(mask_iou(&m("1100"), &m("1100")).unwrap(), 1.0);
        assert_eq!(mask_iou(&m("1100"), &m("0011")).unwrap(), 0.0);
        assert_eq!(mask_iou(&m("1100"), &m("0110")).unwrap(), 1.0 / 3.0);
        assert_eq!(mask_iou(&m("0000"), &m("0000")).unwrap(), 0.0);
        assert!(mask_iou(&m("110"), &m("0110")).is_err());
    }

    fn det(scene: usize, mask: &str, class: u32, score: f64) -> Detection {
        Detection {
            scene,
            mask: m(mask),
            class_id: ClassId(class),
            score,
        }
    }

    fn gt(scene: usize, mask: &str, class: u32) -> GroundTruth {
        GroundTruth {
            scene,
            mask: m(mask),
            class_id: ClassId(class),
        }
    }

    #[test]
    fn exact_and_missing() {
        let g = [gt(0, "1100", 0)];
        for t in standard_thresholds() {
            let ap = average_precision(&[det(0, "1100", 0, 0.9)], &g, ClassId(0), t).unwrap();
            assert_eq!(ap, Some(1.0));
            let ap = average_precision(&[det(0, "0011", 0, 0.9)], &g, ClassId(0), t).unwrap();
            assert_eq!(ap, Some(0.0));
        }
        assert_eq!(average_precision(&[], &g, ClassId(1), 0.5).unwrap(), None);
    }

    #[test]
    fn hand_enumerated_pr_curve() {
        // 3 GT; ranked hits: TP, FP, TP, FP, TP.
        // Precisions 1, 1/2, 2/3, 2/4, 3/5; interpolated at TPs: 1, 2/3, 3/5.
        let flags = [true, false, true, false, true];
        let ap = ap_from_flags(&flags, 3).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0 + 0.6) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn duplicate_detection_is_false_positive() {
        let g = [gt(0, "1100", 0)];
        let d = [det(0, "1100", 0, 0.9), det(0, "1100", 0, 0.8)];
        assert_eq!(match_detections(&d, &g, ClassId(0), 0.5).unwrap(), vec![true, false]);
    }

    #[test]
    fn scene_boundaries_respected() {
        let g = [gt(0, "1100", 0)];
        let d = [det(1, "1100", 0, 0.9)];
        assert_eq!(average_precision(&d, &g, ClassId(0), 0.5).unwrap(), Some(0.0));
    }

    #[test]
    fn mean_ap_rules() {
        let one = ClassAp {
            class_id: ClassId(0),
            gt_instances: 1,
            ap_at: vec![Some(1.0); 11],
        };
        assert_eq!(
            mean_ap([&one]),
            MeanAp {
                map25: Some(1.0),
                map50: Some(1.0),
                map: Some(1.0)
            }
        );
        let zero = ClassAp {
            class_id: ClassId(1),
            gt_instances: 2,
            ap_at: vec![Some(0.0); 11],
        };
        assert_eq!(mean_ap([&one, &zero]).map50, Some(0.5));
        let absent = ClassAp {
            class_id: ClassId(2),
            gt_instances: 0,
            ap_at: vec![None; 11],
        };
        assert_eq!(mean_ap([&absent]).map50, None);
        assert_eq!(mean_ap([&one, &absent]).map50, Some(1.0));
    }
}
