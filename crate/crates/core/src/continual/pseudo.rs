//! Pseudo-labels from the frozen previous-phase model.

use serde::{Deserialize, Serialize};

use crate::continual::frequency::WeightTable;
use crate::error::Result;
use crate::mask::BitMask;
use crate::model::{Model, PredictionSet};
use crate::types::{ClassId, Scene};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PseudoOrigin {
    Plg,
    Cbr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoItem {
    pub mask: BitMask,
    pub class_id: ClassId,
    pub score: f64,
    pub source_query: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub items: Vec<PseudoItem>,
    pub origin: PseudoOrigin,
}

impl PseudoLabelSet {
    pub fn empty(origin: PseudoOrigin) -> Self {
        Self {
            items: Vec::new(),
            origin,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// A query that may become a pseudo-label: real-class argmax, confidence at
/// least `min_score`, and a non-empty binarised mask.
#[derive(Clone, Debug, PartialEq)]
struct Candidate {
    query: usize,
    class_id: ClassId,
    confidence: f64,
    mask: BitMask,
}

/// The surviving predictions of one frozen-model pass. The frozen model does
/// not change within a phase, so these can be computed once per scene.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PseudoCandidates {
    items: Vec<Candidate>,
}

impl PseudoCandidates {
    pub fn from_prediction(pred: &PredictionSet, min_score: f64) -> Self {
        let items = (0..pred.num_queries())
            .filter(|&q| !pred.is_no_object(q) && pred.confidence[q] >= min_score)
            .filter_map(|q| {
                let (class_id, _) = pred.best_real_class(q)?;
                let mask = pred.binarized_mask(q);
                mask.any().then_some(Candidate {
                    query: q,
                    class_id,
                    confidence: pred.confidence[q],
                    mask,
                })
            })
            .collect();
        Self { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Top-`k` by confidence, ties by query index.
    pub fn top_k(&self, k: usize) -> PseudoLabelSet {
        let scored = self.items.iter().map(|c| (c.confidence, c)).collect();
        top_k(scored, k, PseudoOrigin::Plg)
    }

    /// Top-`k` by `w(class) * confidence`, ties by query index.
    pub fn reweighted_top_k(&self, weights: &WeightTable, k: usize) -> Result<PseudoLabelSet> {
        let scored = self
            .items
            .iter()
            .map(|c| Ok((weights.get(c.class_id)? * c.confidence, c)))
            .collect::<Result<Vec<_>>>()?;
        Ok(top_k(scored, k, PseudoOrigin::Cbr))
    }
}

fn top_k(mut scored: Vec<(f64, &Candidate)>, k: usize, origin: PseudoOrigin) -> PseudoLabelSet {
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.query.cmp(&b.1.query)));
    scored.truncate(k);
    PseudoLabelSet {
        items: scored
            .into_iter()
            .map(|(score, c)| PseudoItem {
                mask: c.mask.clone(),
                class_id: c.class_id,
                score,
                source_query: c.query,
            })
            .collect(),
        origin,
    }
}

/// Keeps the `k` most confident predictions that are not no-object and
/// reach `min_score`; masks are binarised at 0.5.
pub fn select_pseudo_labels(pred: &PredictionSet, k: usize, min_score: f64) -> PseudoLabelSet {
    PseudoCandidates::from_prediction(pred, min_score).top_k(k)
}

pub fn generate_pseudo_labels(
    frozen: &Model,
    scene: &Scene,
    k: usize,
    min_score: f64,
) -> Result<PseudoLabelSet> {
    Ok(select_pseudo_labels(&frozen.forward(scene)?, k, min_score))
}

/// Same survivors as [`select_pseudo_labels`], ranked by `w(class) * confidence`.
pub fn reweight_and_select(
    pred: &PredictionSet,
    weights: &WeightTable,
    k: usize,
    min_score: f64,
) -> Result<PseudoLabelSet> {
    PseudoCandidates::from_prediction(pred, min_score).reweighted_top_k(weights, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    const POINTS: usize = 4;

    /// One query per `(class head, class logit, mask bits)`, two real classes.
    /// The mask logits are large enough that scores above 0.5 sit near 1.
    fn prediction(queries: &[(usize, f64, u8)]) -> PredictionSet {
        let heads = 3;
        let mut class_logits = Vec::new();
        let mut mask_logits = Vec::new();
        for &(head, logit, bits) in queries {
            let mut row = vec![0.0; heads];
            row[head] = logit;
            class_logits.extend(row);
            mask_logits.extend((0..POINTS).map(|p| if bits >> p & 1 == 1 { 30.0 } else { -30.0 }));
        }
        PredictionSet::from_logits(vec![ClassId(0), ClassId(1)], POINTS, mask_logits, class_logits)
    }

    fn queries(set: &PseudoLabelSet) -> Vec<usize> {
        set.items.iter().map(|i| i.source_query).collect()
    }

    #[test]
    fn filters_no_object_low_confidence_and_empty_masks() {
        let pred = prediction(&[
            (0, 6.0, 0b0011), // kept
            (2, 6.0, 0b0011), // no-object argmax
            (1, 0.0, 0b0100), // uniform head, confidence 1/3
            (1, 6.0, 0b0000), // empty mask
            (1, 5.0, 0b1000), // kept
        ]);
        let set = select_pseudo_labels(&pred, 8, 0.5);
        assert_eq!(queries(&set), vec![0, 4]);
        assert_eq!(set.items[0].mask, BitMask::from_indices(POINTS, [0, 1]));
        assert_eq!(set.items[1].class_id, ClassId(1));
        assert_eq!(set.origin, PseudoOrigin::Plg);
    }

    #[test]
    fn uniform_head_and_zero_k_give_nothing() {
        let pred = prediction(&[(0, 0.0, 0b1111), (1, 0.0, 0b0001)]);
        assert!(select_pseudo_labels(&pred, 8, 0.5).is_empty());
        let pred = prediction(&[(0, 6.0, 0b1111)]);
        assert!(select_pseudo_labels(&pred, 0, 0.5).is_empty());
    }

    #[test]
    fn top_k_matches_full_sort() {
        let logits = [3.0, 5.5, 4.0, 7.0, 2.5, 6.0];
        let qs: Vec<(usize, f64, u8)> = logits.iter().enumerate().map(|(i, &l)| (i % 2, l, 0b0001)).collect();
        let pred = prediction(&qs);
        let mut order: Vec<usize> = (0..logits.len()).collect();
        order.sort_by(|&a, &b| pred.confidence[b].total_cmp(&pred.confidence[a]));
        let set = select_pseudo_labels(&pred, 3, 0.5);
        assert_eq!(queries(&set), order[..3].to_vec());
    }

    #[test]
    fn ties_break_by_query_index() {
        let pred = prediction(&[(0, 6.0, 0b0001), (1, 6.0, 0b0010), (0, 6.0, 0b0100)]);
        assert_eq!(queries(&select_pseudo_labels(&pred, 2, 0.5)), vec![0, 1]);
    }

    #[test]
    fn reweighting_promotes_rare_classes() {
        // A confident frequent-class query against a weaker rare-class one.
        let pred = prediction(&[(0, 8.0, 0b0011), (1, 1.6, 0b0100)]);
        let (c0, c1) = (pred.confidence[0], pred.confidence[1]);
        assert!(c0 > 0.9 && c1 > 0.5 && c1 < 0.8);
        let weights = WeightTable {
            weights: [(ClassId(0), 0.1), (ClassId(1), 1.0)].into_iter().collect(),
            epsilon: 1e-8,
        };
        let cbr = reweight_and_select(&pred, &weights, 1, 0.5).unwrap();
        assert_eq!(queries(&cbr), vec![1]);
        assert_eq!(cbr.items[0].score, c1);
        assert_eq!(cbr.origin, PseudoOrigin::Cbr);
        assert_eq!(queries(&select_pseudo_labels(&pred, 1, 0.5)), vec![0]);

        let both = reweight_and_select(&pred, &weights, 2, 0.5).unwrap();
        assert_eq!(both.items[1].score, 0.1 * c0);
    }

    #[test]
    fn missing_weight_is_an_error() {
        let pred = prediction(&[(1, 6.0, 0b0001)]);
        let weights = WeightTable::uniform([ClassId(0)]);
        assert!(reweight_and_select(&pred, &weights, 1, 0.5).is_err());
    }

    #[test]
    fn cached_candidates_match_direct_selection() {
        let pred = prediction(&[(0, 6.0, 0b0011), (1, 4.0, 0b0100), (1, 7.0, 0b1000)]);
        let cached = PseudoCandidates::from_prediction(&pred, 0.5);
        assert_eq!(cached.len(), 3);
        assert_eq!(cached.top_k(2), select_pseudo_labels(&pred, 2, 0.5));
    }
}
