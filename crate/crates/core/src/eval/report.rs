use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::ap::{class_ap_table, mean_ap, standard_thresholds, ClassAp, Detection, GroundTruth, MeanAp};
use crate::eval::semantic::{instance_to_semantic, miou, scene_point_labels};
use crate::model::{Model, PredictionSet};
use crate::types::{ClassId, Dataset};

pub const MAP_DEFINITION: &str = "mAP = mean over classes of AP averaged over IoU 0.50:0.05:0.95";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    /// 1-based phase index in the scenario plan.
    pub phase: usize,
    pub classes: BTreeSet<ClassId>,
    #[serde(flatten)]
    pub mean: MeanAp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub map_definition: String,
    pub thresholds: Vec<f64>,
    pub per_class: Vec<ClassAp>,
    #[serde(flatten)]
    pub all: MeanAp,
    pub miou: Option<f64>,
    pub splits: Vec<SplitMetrics>,
}

impl MetricReport {
    pub fn from_class_table(
        per_class: Vec<ClassAp>,
        splits: &[BTreeSet<ClassId>],
        miou: Option<f64>,
    ) -> Self {
        let all = mean_ap(&per_class);
        let splits = splits
            .iter()
            .enumerate()
            .map(|(i, classes)| SplitMetrics {
                phase: i + 1,
                classes: classes.clone(),
                mean: mean_ap(per_class.iter().filter(|r| classes.contains(&r.class_id))),
            })
            .collect();
        Self {
            map_definition: MAP_DEFINITION.to_string(),
            thresholds: standard_thresholds(),
            per_class,
            all,
            miou,
            splits,
        }
    }

    /// Mean over the given classes only.
    pub fn restricted(&self, classes: &BTreeSet<ClassId>) -> MeanAp {
        mean_ap(self.per_class.iter().filter(|r| classes.contains(&r.class_id)))
    }

    /// One row per class per threshold; undefined values are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class_id,gt_instances,iou_threshold,ap\n");
        for row in &self.per_class {
            for (t, ap) in self.thresholds.iter().zip(&row.ap_at) {
                let ap = ap.map(|v| v.to_string()).unwrap_or_default();
                let _ = writeln!(out, "{},{},{t:.2},{ap}", row.class_id, row.gt_instances);
            }
        }
        out
    }
}

/// Ordered `(phase, report)` pairs, one per completed phase.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseHistory {
    pub entries: Vec<(usize, MetricReport)>,
}

impl PhaseHistory {
    pub fn push(&mut self, phase: usize, report: MetricReport) {
        self.entries.push((phase, report));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Detections used for evaluation: every query whose most likely label is a
/// real class and whose binarised mask is non-empty, scored by confidence.
pub fn detections_from_prediction(pred: &PredictionSet, scene: usize) -> Vec<Detection> {
    (0..pred.num_queries())
        .filter(|&q| !pred.is_no_object(q))
        .filter_map(|q| {
            let mask = pred.binarized_mask(q);
            let (class_id, _) = pred.best_real_class(q)?;
            mask.any().then(|| Detection {
                scene,
                mask,
                class_id,
                score: pred.confidence[q],
            })
        })
        .collect()
}

pub fn ground_truth_of(dataset: &Dataset) -> Vec<GroundTruth> {
    dataset
        .scenes
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            s.instances.iter().map(move |inst| GroundTruth {
                scene: i,
                mask: inst.mask.clone(),
                class_id: inst.class_id,
            })
        })
        .collect()
}

/// Evaluates `model` over the visible classes of `dataset`, with split
/// aggregates for each entry of `splits`.
pub fn evaluate(
    model: &Model,
    dataset: &Dataset,
    splits: &[BTreeSet<ClassId>],
    with_miou: bool,
) -> Result<MetricReport> {
    let mut detections = Vec::new();
    let mut pred_points = Vec::new();
    let mut gt_points = Vec::new();
    for (i, scene) in dataset.scenes.iter().enumerate() {
        let pred = model.forward(scene)?;
        let dets = detections_from_prediction(&pred, i);
        if with_miou {
            pred_points.extend(instance_to_semantic(&dets, scene.num_points()));
            gt_points.extend(scene_point_labels(scene));
        }
        detections.extend(dets);
    }
    let gt = ground_truth_of(dataset);
    let table = class_ap_table(&detections, &gt, dataset.visible_classes.iter().copied())?;
    let miou = if with_miou {
        miou(&pred_points, &gt_points, &dataset.visible_classes)?
    } else {
        None
    };
    Ok(MetricReport::from_class_table(table, splits, miou))
}
