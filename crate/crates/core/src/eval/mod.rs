//! Instance-segmentation metrics (AP / mAP), semantic mIoU and forgetting.

pub mod ap;
pub mod forgetting;
pub mod report;
pub mod semantic;

pub use ap::{average_precision, class_ap_table, mask_iou, mean_ap, ClassAp, Detection, GroundTruth, MeanAp};
pub use forgetting::{fpp, FppMetric};
pub use report::{evaluate, MetricReport, PhaseHistory, SplitMetrics};
pub use semantic::{instance_to_semantic, miou};
