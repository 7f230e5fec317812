use crate::continual::{AugmentedTargets, WeightTable};
use crate::error::{Error, Result};
use crate::model::loss::{compute_loss, LossConfig};
use crate::model::matching::{hungarian_match, Assignment};
use crate::model::network::{Model, Params};
use crate::types::Scene;

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    pub assignment: Assignment,
}

/// Loss and full parameter gradient for a fixed assignment.
pub fn loss_and_gradient(
    model: &Model,
    scene: &Scene,
    targets: &AugmentedTargets,
    assignment: &Assignment,
    class_weights: &WeightTable,
    cfg: &LossConfig,
) -> Result<(f64, Params)> {
    let (pred, cache) = model.forward_cached(scene)?;
    let value = compute_loss(&pred, targets, assignment, class_weights, cfg)?;
    let grad = model.backward(&cache, &value.d_mask_logits, &value.d_class_logits);
    Ok((value.loss, grad))
}

/// One SGD step: forward, match, loss, backward, update.
pub fn train_step(
    model: &mut Model,
    scene: &Scene,
    targets: &AugmentedTargets,
    class_weights: &WeightTable,
    learn_rate: f64,
    cfg: &LossConfig,
) -> Result<StepReport> {
    let (pred, cache) = model.forward_cached(scene)?;
    let assignment = hungarian_match(&pred, targets, cfg.match_weights)?;
    let value = compute_loss(&pred, targets, &assignment, class_weights, cfg)?;
    let grad = model.backward(&cache, &value.d_mask_logits, &value.d_class_logits);
    if !grad.all_finite() {
        return Err(Error::NumericFault { layer: "gradient" });
    }
    if learn_rate != 0.0 {
        for (param, g) in model.params.tensors_mut().into_iter().zip(grad.tensors()) {
            for (p, gv) in param.iter_mut().zip(g) {
                *p -= learn_rate * gv;
            }
        }
    }
    Ok(StepReport {
        loss: value.loss,
        assignment,
    })
}
