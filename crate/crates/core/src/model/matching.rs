//! Exact minimum-cost bipartite matching between targets and queries.

use crate::continual::AugmentedTargets;
use crate::error::{Error, Result};
use crate::mask::BitMask;
use crate::model::network::PredictionSet;

/// `pairs` holds `(query, target)` sorted by target index. Queries that do
/// not appear are treated as no-object.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
}

impl Assignment {
    pub fn query_for_target(&self, target: usize) -> Option<usize> {
        self.pairs.iter().find(|&&(_, t)| t == target).map(|&(q, _)| q)
    }

    /// Per-query matched target, `None` for unmatched queries.
    pub fn by_query(&self, num_queries: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; num_queries];
        for &(q, t) in &self.pairs {
            out[q] = Some(t);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MatchWeights {
    pub mask: f64,
    pub class: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        Self { mask: 1.0, class: 1.0 }
    }
}

/// Solves the rectangular assignment problem for `cost[row][col]` with
/// `rows <= cols`, returning the column chosen for each row.
///
/// Shortest augmenting path with row/column potentials, `O(rows^2 * cols)`.
pub fn solve_assignment(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let m = cost[0].len();
    if cost.iter().any(|r| r.len() != m) {
        return Err(Error::Config("ragged cost matrix".into()));
    }
    if n > m {
        return Err(Error::Capacity { targets: n, queries: m });
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::NumericFault { layer: "matching.cost" });
    }

    // 1-based indexing; column 0 is a virtual sink.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0usize; n];
    for j in 1..=m {
        if owner[j] != 0 {
            out[owner[j] - 1] = j - 1;
        }
    }
    Ok(out)
}

/// `sum(s * m) / (sum(s) + sum(m) - sum(s * m))` with `m` binary.
pub fn soft_iou(scores: &[f64], mask: &BitMask) -> f64 {
    let mut inter = 0.0;
    let mut total = 0.0;
    for (i, &s) in scores.iter().enumerate() {
        total += s;
        if mask.get(i) {
            inter += s;
        }
    }
    let union = total + mask.count_ones() as f64 - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Rows are targets, columns are queries.
pub fn matching_cost_matrix(
    pred: &PredictionSet,
    targets: &AugmentedTargets,
    weights: MatchWeights,
) -> Result<Vec<Vec<f64>>> {
    targets
        .items
        .iter()
        .map(|t| {
            let head = pred
                .head_index(t.class_id)
                .ok_or(Error::UnknownClass(t.class_id))?;
            Ok((0..pred.num_queries())
                .map(|q| {
                    weights.mask * (1.0 - soft_iou(pred.mask_scores(q), &t.mask))
                        + weights.class * (1.0 - pred.class_probs(q)[head])
                })
                .collect())
        })
        .collect()
}

pub fn hungarian_match(
    pred: &PredictionSet,
    targets: &AugmentedTargets,
    weights: MatchWeights,
) -> Result<Assignment> {
    if targets.items.len() > pred.num_queries() {
        return Err(Error::Capacity {
            targets: targets.items.len(),
            queries: pred.num_queries(),
        });
    }
    let cost = matching_cost_matrix(pred, targets, weights)?;
    let cols = solve_assignment(&cost)?;
    Ok(Assignment {
        pairs: cols.into_iter().enumerate().map(|(t, q)| (q, t)).collect(),
    })
}
