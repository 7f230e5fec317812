//! Set-prediction loss over matched queries.
//!
//! For matched pairs `(q, j)`:
//! `mask(q, j) + lambda * w''(c_j) * nll(q, c_j)` averaged over targets, where
//! `mask = mean BCE + Dice` and `w'' = w' * lambda_cls`. Unmatched queries add
//! `lambda * no_object_weight * mean_q nll(q, no-object)`, and carry no mask loss.

use serde::{Deserialize, Serialize};

use crate::continual::{AugmentedTargets, WeightTable};
use crate::error::{Error, Result};
use crate::mask::BitMask;
use crate::model::matching::{Assignment, MatchWeights};
use crate::model::network::{sigmoid, PredictionSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Mask/classification trade-off.
    pub lambda: f64,
    /// Scale applied on top of the class weights.
    pub lambda_cls: f64,
    /// Relative weight of the no-object term for unmatched queries.
    pub no_object_weight: f64,
    pub match_weights: MatchWeights,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            lambda_cls: 2.0,
            no_object_weight: 0.1,
            match_weights: MatchWeights::default(),
        }
    }
}

/// Loss value plus its gradient with respect to the model outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    /// `(query, dL/dmask_logit per point)` for matched queries only.
    pub d_mask_logits: Vec<(usize, Vec<f64>)>,
    /// Dense `Q x (K + 1)` gradient on class logits.
    pub d_class_logits: Vec<f64>,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy over points plus Dice loss.
pub fn mask_loss(logits: &[f64], target: &BitMask) -> f64 {
    let m = logits.len() as f64;
    let mut bce = 0.0;
    let mut inter = 0.0;
    let mut sum_s = 0.0;
    for (i, &l) in logits.iter().enumerate() {
        let y = target.get(i);
        bce += softplus(l) - if y { l } else { 0.0 };
        let s = sigmoid(l);
        sum_s += s;
        if y {
            inter += s;
        }
    }
    let denom = sum_s + target.count_ones() as f64 + 1.0;
    bce / m + (1.0 - (2.0 * inter + 1.0) / denom)
}

fn mask_loss_grad(logits: &[f64], target: &BitMask, scale: f64) -> Vec<f64> {
    let m = logits.len() as f64;
    let scores: Vec<f64> = logits.iter().map(|&l| sigmoid(l)).collect();
    let mut inter = 0.0;
    let mut sum_s = 0.0;
    for (i, &s) in scores.iter().enumerate() {
        sum_s += s;
        if target.get(i) {
            inter += s;
        }
    }
    let denom = sum_s + target.count_ones() as f64 + 1.0;
    let numer = 2.0 * inter + 1.0;
    scores
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let y = if target.get(i) { 1.0 } else { 0.0 };
            let d_dice_ds = -(2.0 * y * denom - numer) / (denom * denom);
            scale * ((s - y) / m + d_dice_ds * s * (1.0 - s))
        })
        .collect()
}

/// `-log softmax(logits)[index]`.
pub fn class_nll(logits: &[f64], index: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[index]
}

fn add_class_grad(probs: &[f64], index: usize, scale: f64, out: &mut [f64]) {
    for (k, (o, &p)) in out.iter_mut().zip(probs).enumerate() {
        *o += scale * (p - if k == index { 1.0 } else { 0.0 });
    }
}

fn check_assignment(pred: &PredictionSet, targets: &AugmentedTargets, a: &Assignment) -> Result<()> {
    let n = targets.items.len();
    let mut target_seen = vec![false; n];
    let mut query_seen = vec![false; pred.num_queries()];
    for &(q, t) in &a.pairs {
        if q >= query_seen.len() || t >= n || query_seen[q] || target_seen[t] {
            return Err(Error::Config(format!("invalid assignment pair ({q}, {t})")));
        }
        query_seen[q] = true;
        target_seen[t] = true;
    }
    if target_seen.iter().any(|s| !s) {
        return Err(Error::Config("assignment leaves a target unmatched".into()));
    }
    Ok(())
}

/// Weighted objective with analytic output gradients.
pub fn compute_loss(
    pred: &PredictionSet,
    targets: &AugmentedTargets,
    assignment: &Assignment,
    class_weights: &WeightTable,
    cfg: &LossConfig,
) -> Result<LossValue> {
    check_assignment(pred, targets, assignment)?;
    let n = targets.items.len();
    let qn = pred.num_queries();
    let heads = pred.num_heads();
    let no_object = heads - 1;

    let mut d_class_logits = vec![0.0; qn * heads];
    let mut d_mask_logits = Vec::with_capacity(n);
    let mut matched_sum = 0.0;
    for &(q, t) in &assignment.pairs {
        let target = &targets.items[t];
        let head = pred
            .head_index(target.class_id)
            .ok_or(Error::UnknownClass(target.class_id))?;
        let weight = class_weights.get(target.class_id)? * cfg.lambda_cls;
        let multiplier = cfg.lambda * weight;
        let logits = pred.mask_logits(q);
        matched_sum += mask_loss(logits, &target.mask)
            + multiplier * class_nll(pred.class_logits(q), head);
        let inv_n = 1.0 / n as f64;
        d_mask_logits.push((q, mask_loss_grad(logits, &target.mask, inv_n)));
        add_class_grad(
            pred.class_probs(q),
            head,
            multiplier * inv_n,
            &mut d_class_logits[q * heads..(q + 1) * heads],
        );
    }

    let matched = assignment.by_query(qn);
    let noobj_scale = cfg.lambda * cfg.no_object_weight / qn as f64;
    let mut noobj_sum = 0.0;
    for q in (0..qn).filter(|&q| matched[q].is_none()) {
        noobj_sum += class_nll(pred.class_logits(q), no_object);
        add_class_grad(
            pred.class_probs(q),
            no_object,
            noobj_scale,
            &mut d_class_logits[q * heads..(q + 1) * heads],
        );
    }

    let matched_mean = if n == 0 { 0.0 } else { matched_sum / n as f64 };
    let loss = matched_mean + noobj_scale * noobj_sum;
    if !loss.is_finite() {
        return Err(Error::NumericFault { layer: "loss" });
    }
    d_mask_logits.sort_by_key(|(q, _)| *q);
    Ok(LossValue {
        loss,
        d_mask_logits,
        d_class_logits,
    })
}

/// The unweighted objective: every target's classification term is scaled
/// by `lambda` alone.
pub fn unweighted_loss(
    pred: &PredictionSet,
    targets: &AugmentedTargets,
    assignment: &Assignment,
    lambda: f64,
    no_object_weight: f64,
) -> Result<f64> {
    check_assignment(pred, targets, assignment)?;
    let n = targets.items.len();
    let qn = pred.num_queries();
    let no_object = pred.num_heads() - 1;
    let mut matched_sum = 0.0;
    for &(q, t) in &assignment.pairs {
        let target = &targets.items[t];
        let head = pred
            .head_index(target.class_id)
            .ok_or(Error::UnknownClass(target.class_id))?;
        matched_sum += mask_loss(pred.mask_logits(q), &target.mask)
            + lambda * class_nll(pred.class_logits(q), head);
    }
    let matched = assignment.by_query(qn);
    let noobj_scale = lambda * no_object_weight / qn as f64;
    let noobj_sum: f64 = (0..qn)
        .filter(|&q| matched[q].is_none())
        .map(|q| class_nll(pred.class_logits(q), no_object))
        .sum();
    let matched_mean = if n == 0 { 0.0 } else { matched_sum / n as f64 };
    Ok(matched_mean + noobj_scale * noobj_sum)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturated_mask_loss_vanishes() {
        let target = BitMask::from_bit_str("1100");
        let logits = [40.0, 40.0, -40.0, -40.0];
        // Dice keeps its +1 smoothing: 1 - (2*2+1)/(2+2+1) = 0.
        assert!(mask_loss(&logits, &target) < 1e-12);
        assert!(class_nll(&[40.0, -40.0], 0) < 1e-12);
    }

    #[test]
    fn mask_grad_matches_finite_difference() {
        let target = BitMask::from_bit_str("10110");
        let logits = vec![0.3, -1.2, 2.0, 0.1, -0.4];
        let g = mask_loss_grad(&logits, &target, 1.0);
        for i in 0..logits.len() {
            let h = 1e-6;
            let mut up = logits.clone();
            up[i] += h;
            let mut dn = logits.clone();
            dn[i] -= h;
            let fd = (mask_loss(&up, &target) - mask_loss(&dn, &target)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8, "{i}: {fd} vs {}", g[i]);
        }
    }
}
