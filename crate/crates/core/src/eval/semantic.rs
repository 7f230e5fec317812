//! Projection of instance predictions onto per-point semantic labels, and mIoU.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::eval::ap::Detection;
use crate::types::{ClassId, Scene};

/// Each point takes the class of the highest-scoring detection whose mask
/// covers it (first detection wins ties); uncovered points stay `None`.
pub fn instance_to_semantic(detections: &[Detection], num_points: usize) -> Vec<Option<ClassId>> {
    let mut best: Vec<Option<(f64, ClassId)>> = vec![None; num_points];
    for d in detections {
        for p in d.mask.ones() {
            if best[p].is_none_or(|(s, _)| d.score > s) {
                best[p] = Some((d.score, d.class_id));
            }
        }
    }
    best.into_iter().map(|b| b.map(|(_, c)| c)).collect()
}

/// Ground-truth per-point labels; points outside every instance are `None`.
pub fn scene_point_labels(scene: &Scene) -> Vec<Option<ClassId>> {
    let mut out = vec![None; scene.num_points()];
    for inst in &scene.instances {
        for p in inst.mask.ones() {
            out[p] = Some(inst.class_id);
        }
    }
    out
}

/// Point-level IoU per class in `class_set`, averaged over classes with at
/// least one ground-truth point. Background points (no ground-truth label) are
/// ignored; a labeled point no prediction covers counts as a miss.
pub fn miou(
    pred_labels: &[Option<ClassId>],
    gt_labels: &[Option<ClassId>],
    class_set: &BTreeSet<ClassId>,
) -> Result<Option<f64>> {
    if pred_labels.len() != gt_labels.len() {
        return Err(Error::LengthMismatch {
            left: pred_labels.len(),
            right: gt_labels.len(),
        });
    }
    let mut ious = Vec::new();
    for &c in class_set {
        if !gt_labels.contains(&Some(c)) {
            continue;
        }
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (p, g) in pred_labels.iter().zip(gt_labels) {
            let Some(g) = g else { continue };
            match (*p == Some(c), *g == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let denom = tp + fp + fn_;
        ious.push(if denom == 0 { 0.0 } else { tp as f64 / denom as f64 });
    }
    if ious.is_empty() {
        Ok(None)
    } else {
        Ok(Some(ious.iter().sum::<f64>() / ious.len() as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::BitMask;

    fn det(mask: &str, class: u32, score: f64) -> Detection {
        Detection {
            scene: 0,
            mask: BitMask::from_bit_str(mask),
            class_id: ClassId(class),
            score,
        }
    }

    #[test]
    fn projection_rules() {
        let labels = instance_to_semantic(&[det("1111", 3, 0.2)], 4);
        assert_eq!(labels, vec![Some(ClassId(3)); 4]);
        let labels = instance_to_semantic(&[det("1100", 1, 0.4), det("0110", 2, 0.9)], 4);
        assert_eq!(labels, vec![Some(ClassId(1)), Some(ClassId(2)), Some(ClassId(2)), None]);
    }

    #[test]
    fn miou_extremes() {
        let classes: BTreeSet<ClassId> = [ClassId(0), ClassId(1)].into();
        let gt = vec![Some(ClassId(0)), Some(ClassId(0)), Some(ClassId(1)), None];
        assert_eq!(miou(&gt, &gt, &classes).unwrap(), Some(1.0));
        let wrong = vec![Some(ClassId(1)), Some(ClassId(1)), Some(ClassId(0)), None];
        assert_eq!(miou(&wrong, &gt, &classes).unwrap(), Some(0.0));
    }

    #[test]
    fn two_class_confusion() {
        // gt:   0 0 0 1 1 -
        // pred: 0 0 1 1 - 0
        // class 0: tp 2, fp 0 (last point has no gt), fn 1 -> 2/3
        // class 1: tp 1, fp 1, fn 1 (uncovered point is a miss) -> 1/3
        let c = |v: u32| Some(ClassId(v));
        let gt = vec![c(0), c(0), c(0), c(1), c(1), None];
        let pred = vec![c(0), c(0), c(1), c(1), None, c(0)];
        let classes: BTreeSet<ClassId> = [ClassId(0), ClassId(1)].into();
        let v = miou(&pred, &gt, &classes).unwrap().unwrap();
        assert!((v - (2.0 / 3.0 + 1.0 / 3.0) / 2.0).abs() < 1e-15);
    }
}
