//! The point-wise feature network, per-query heads, and the flat binary
//! checkpoint format.
//!
//! Checkpoint layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  b"CLIMB3D\0"
//! version      u32      1
//! input_dim    u64      always 6
//! d            u64      feature width
//! queries      u64      Q
//! classes      u64      K (known classes, excluding no-object)
//! class ids    K x u32  head row order
//! parameters   f64[]    feat_w1[d*6] feat_b1[d] feat_w2[d*d] feat_b2[d]
//!                       queries[Q*d] class_w[(K+1)*d] class_b[K+1] mask_emb[Q*d]
//! ```

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::mask::BitMask;
use crate::types::{ClassId, Point, Scene};

pub const INPUT_DIM: usize = 6;
const CHECKPOINT_MAGIC: &[u8; 8] = b"CLIMB3D\0";
const CHECKPOINT_VERSION: u32 = 1;

/// Maps raw point channels to roughly `[-1, 1]`: coordinates assume the
/// generator's `[0, 10]` cube, colours are already in `[0, 1]`.
pub fn normalize_point(p: &Point) -> [f64; INPUT_DIM] {
    [
        p.x / 5.0 - 1.0,
        p.y / 5.0 - 1.0,
        p.z / 5.0 - 1.0,
        2.0 * p.r - 1.0,
        2.0 * p.g - 1.0,
        2.0 * p.b - 1.0,
    ]
}

/// All trainable tensors. Also used for gradients, which share the shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub feat_w1: Vec<f64>,
    pub feat_b1: Vec<f64>,
    pub feat_w2: Vec<f64>,
    pub feat_b2: Vec<f64>,
    pub queries: Vec<f64>,
    pub class_w: Vec<f64>,
    pub class_b: Vec<f64>,
    pub mask_emb: Vec<f64>,
}

pub const PARAM_NAMES: [&str; 8] = [
    "feat_w1", "feat_b1", "feat_w2", "feat_b2", "queries", "class_w", "class_b", "mask_emb",
];

impl Params {
    pub fn zeros_like(other: &Params) -> Params {
        let z = |v: &Vec<f64>| vec![0.0; v.len()];
        Params {
            feat_w1: z(&other.feat_w1),
            feat_b1: z(&other.feat_b1),
            feat_w2: z(&other.feat_w2),
            feat_b2: z(&other.feat_b2),
            queries: z(&other.queries),
            class_w: z(&other.class_w),
            class_b: z(&other.class_b),
            mask_emb: z(&other.mask_emb),
        }
    }

    /// Tensors in checkpoint order.
    pub fn tensors(&self) -> [&[f64]; 8] {
        [
            &self.feat_w1,
            &self.feat_b1,
            &self.feat_w2,
            &self.feat_b2,
            &self.queries,
            &self.class_w,
            &self.class_b,
            &self.mask_emb,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.feat_w1,
            &mut self.feat_b1,
            &mut self.feat_w2,
            &mut self.feat_b2,
            &mut self.queries,
            &mut self.class_w,
            &mut self.class_b,
            &mut self.mask_emb,
        ]
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    d: usize,
    num_queries: usize,
    known_classes: Vec<ClassId>,
    pub params: Params,
}

/// Intermediate activations kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct ForwardCache {
    pub inputs: Vec<[f64; INPUT_DIM]>,
    pub hidden: Vec<f64>,
    pub features: Vec<f64>,
}

/// Per-query outputs for one scene. Query-major layouts: `mask_logits[q * M + p]`
/// and `class_logits[q * (K + 1) + k]`, with the no-object logit at `k = K`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    pub num_points: usize,
    pub known_classes: Vec<ClassId>,
    pub mask_logits: Vec<f64>,
    pub mask_scores: Vec<f64>,
    pub class_logits: Vec<f64>,
    pub class_probs: Vec<f64>,
    pub confidence: Vec<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Confidence of one query: best real-class probability times the mean of
/// the mask scores above 0.5 (zero when no point clears 0.5).
pub fn query_confidence(class_probs: &[f64], mask_scores: &[f64]) -> f64 {
    let real = &class_probs[..class_probs.len() - 1];
    let best = real.iter().copied().fold(0.0, f64::max);
    let (sum, n) = mask_scores
        .iter()
        .filter(|&&s| s > 0.5)
        .fold((0.0, 0usize), |(s, n), &v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        (best * sum / n as f64).clamp(0.0, 1.0)
    }
}

impl PredictionSet {
    /// Derives scores, probabilities and confidences from raw logits laid out
    /// query-major (`num_points` mask logits and `known_classes.len() + 1`
    /// class logits per query).
    pub fn from_logits(
        known_classes: Vec<ClassId>,
        num_points: usize,
        mask_logits: Vec<f64>,
        class_logits: Vec<f64>,
    ) -> Self {
        let heads = known_classes.len() + 1;
        let qn = class_logits.len() / heads;
        assert_eq!(class_logits.len(), qn * heads, "class logits not a multiple of the head count");
        assert_eq!(mask_logits.len(), qn * num_points, "mask logits do not match the query count");
        let mask_scores: Vec<f64> = mask_logits.iter().map(|&l| sigmoid(l)).collect();
        let mut class_probs = vec![0.0; qn * heads];
        for q in 0..qn {
            softmax_into(
                &class_logits[q * heads..(q + 1) * heads],
                &mut class_probs[q * heads..(q + 1) * heads],
            );
        }
        let confidence = (0..qn)
            .map(|q| {
                query_confidence(
                    &class_probs[q * heads..(q + 1) * heads],
                    &mask_scores[q * num_points..(q + 1) * num_points],
                )
            })
            .collect();
        Self {
            num_points,
            known_classes,
            mask_logits,
            mask_scores,
            class_logits,
            class_probs,
            confidence,
        }
    }

    pub fn num_queries(&self) -> usize {
        self.confidence.len()
    }

    pub fn num_heads(&self) -> usize {
        self.known_classes.len() + 1
    }

    pub fn mask_scores(&self, q: usize) -> &[f64] {
        &self.mask_scores[q * self.num_points..(q + 1) * self.num_points]
    }

    pub fn mask_logits(&self, q: usize) -> &[f64] {
        &self.mask_logits[q * self.num_points..(q + 1) * self.num_points]
    }

    pub fn class_probs(&self, q: usize) -> &[f64] {
        let k = self.num_heads();
        &self.class_probs[q * k..(q + 1) * k]
    }

    pub fn class_logits(&self, q: usize) -> &[f64] {
        let k = self.num_heads();
        &self.class_logits[q * k..(q + 1) * k]
    }

    pub fn head_index(&self, class: ClassId) -> Option<usize> {
        self.known_classes.iter().position(|&c| c == class)
    }

    /// Most probable real class and its probability; ties go to the lower head index.
    pub fn best_real_class(&self, q: usize) -> Option<(ClassId, f64)> {
        let probs = self.class_probs(q);
        let mut best: Option<(usize, f64)> = None;
        for (k, &p) in probs[..probs.len() - 1].iter().enumerate() {
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((k, p));
            }
        }
        best.map(|(k, p)| (self.known_classes[k], p))
    }

    /// True when the no-object head has the highest probability.
    pub fn is_no_object(&self, q: usize) -> bool {
        let probs = self.class_probs(q);
        let none = probs[probs.len() - 1];
        probs[..probs.len() - 1].iter().all(|&p| none > p)
    }

    pub fn binarized_mask(&self, q: usize) -> BitMask {
        BitMask::from_indices(
            self.num_points,
            self.mask_scores(q)
                .iter()
                .enumerate()
                .filter(|(_, &s)| s > 0.5)
                .map(|(i, _)| i),
        )
    }
}

fn check_finite(values: &[f64], layer: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericFault { layer })
    }
}

impl Model {
    /// Randomly initialised model; the class head covers `known_classes`
    /// plus the trailing no-object row.
    pub fn new(d: usize, num_queries: usize, known_classes: Vec<ClassId>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize, std: f64| -> Vec<f64> {
            let dist = Normal::new(0.0, std).expect("positive std");
            (0..n).map(|_| dist.sample(&mut rng)).collect()
        };
        let heads = known_classes.len() + 1;
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();
        let params = Params {
            feat_w1: draw(d * INPUT_DIM, 1.0),
            feat_b1: draw(d, 0.5),
            feat_w2: draw(d * d, inv_sqrt_d),
            feat_b2: vec![0.0; d],
            queries: draw(num_queries * d, 1.0),
            class_w: draw(heads * d, 0.1 * inv_sqrt_d),
            class_b: vec![0.0; heads],
            mask_emb: draw(num_queries * d, inv_sqrt_d),
        };
        Self {
            d,
            num_queries,
            known_classes,
            params,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.d
    }

    pub fn num_queries(&self) -> usize {
        self.num_queries
    }

    pub fn known_classes(&self) -> &[ClassId] {
        &self.known_classes
    }

    pub fn num_heads(&self) -> usize {
        self.known_classes.len() + 1
    }

    pub fn head_index(&self, class: ClassId) -> Option<usize> {
        self.known_classes.iter().position(|&c| c == class)
    }

    pub fn forward(&self, scene: &Scene) -> Result<PredictionSet> {
        self.forward_cached(scene).map(|(pred, _)| pred)
    }

    pub(crate) fn forward_cached(&self, scene: &Scene) -> Result<(PredictionSet, ForwardCache)> {
        let d = self.d;
        let m = scene.points.len();
        let p = &self.params;
        let inputs: Vec<[f64; INPUT_DIM]> = scene.points.iter().map(normalize_point).collect();

        let mut hidden = vec![0.0; m * d];
        let mut features = vec![0.0; m * d];
        for (pt, x) in inputs.iter().enumerate() {
            let h = &mut hidden[pt * d..(pt + 1) * d];
            for (j, hj) in h.iter_mut().enumerate() {
                let w = &p.feat_w1[j * INPUT_DIM..(j + 1) * INPUT_DIM];
                let a: f64 = p.feat_b1[j] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                *hj = a.tanh();
            }
            let f = &mut features[pt * d..(pt + 1) * d];
            for (k, fk) in f.iter_mut().enumerate() {
                let w = &p.feat_w2[k * d..(k + 1) * d];
                *fk = p.feat_b2[k] + w.iter().zip(h.iter()).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        check_finite(&hidden, "feature_net.hidden")?;
        check_finite(&features, "feature_net.output")?;

        let qn = self.num_queries;
        let mut mask_logits = vec![0.0; qn * m];
        for q in 0..qn {
            let e = &p.mask_emb[q * d..(q + 1) * d];
            let row = &mut mask_logits[q * m..(q + 1) * m];
            for (pt, l) in row.iter_mut().enumerate() {
                let f = &features[pt * d..(pt + 1) * d];
                *l = e.iter().zip(f).map(|(a, b)| a * b).sum();
            }
        }
        check_finite(&mask_logits, "mask_head")?;

        let heads = self.num_heads();
        let mut class_logits = vec![0.0; qn * heads];
        for q in 0..qn {
            let z = &p.queries[q * d..(q + 1) * d];
            for k in 0..heads {
                let w = &p.class_w[k * d..(k + 1) * d];
                class_logits[q * heads + k] =
                    p.class_b[k] + w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        check_finite(&class_logits, "class_head")?;
        let pred = PredictionSet::from_logits(self.known_classes.clone(), m, mask_logits, class_logits);
        Ok((
            pred,
            ForwardCache {
                inputs,
                hidden,
                features,
            },
        ))
    }

    /// Back-propagates output gradients to parameter gradients.
    /// `d_mask_logits` lists `(query, dL/dlogit per point)` for queries with a
    /// mask loss; other queries contribute no mask gradient.
    pub(crate) fn backward(
        &self,
        cache: &ForwardCache,
        d_mask_logits: &[(usize, Vec<f64>)],
        d_class_logits: &[f64],
    ) -> Params {
        let d = self.d;
        let m = cache.inputs.len();
        let heads = self.num_heads();
        let p = &self.params;
        let mut g = Params::zeros_like(p);

        for q in 0..self.num_queries {
            let dz = &d_class_logits[q * heads..(q + 1) * heads];
            let z = &p.queries[q * d..(q + 1) * d];
            for (k, &dzk) in dz.iter().enumerate() {
                if dzk == 0.0 {
                    continue;
                }
                g.class_b[k] += dzk;
                let w = &p.class_w[k * d..(k + 1) * d];
                for i in 0..d {
                    g.class_w[k * d + i] += dzk * z[i];
                    g.queries[q * d + i] += dzk * w[i];
                }
            }
        }

        let mut d_features = vec![0.0; m * d];
        for (q, dl) in d_mask_logits {
            let e = &p.mask_emb[q * d..(q + 1) * d];
            let ge = &mut g.mask_emb[q * d..(q + 1) * d];
            for (pt, &dlp) in dl.iter().enumerate() {
                if dlp == 0.0 {
                    continue;
                }
                let f = &cache.features[pt * d..(pt + 1) * d];
                let df = &mut d_features[pt * d..(pt + 1) * d];
                for i in 0..d {
                    ge[i] += dlp * f[i];
                    df[i] += dlp * e[i];
                }
            }
        }

        if d_mask_logits.is_empty() {
            return g;
        }
        let mut da = vec![0.0; d];
        for pt in 0..m {
            let df = &d_features[pt * d..(pt + 1) * d];
            let h = &cache.hidden[pt * d..(pt + 1) * d];
            da.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..d {
                let dfk = df[k];
                if dfk == 0.0 {
                    continue;
                }
                g.feat_b2[k] += dfk;
                let w = &p.feat_w2[k * d..(k + 1) * d];
                let gw = &mut g.feat_w2[k * d..(k + 1) * d];
                for j in 0..d {
                    gw[j] += dfk * h[j];
                    da[j] += dfk * w[j];
                }
            }
            let x = &cache.inputs[pt];
            for j in 0..d {
                let daj = da[j] * (1.0 - h[j] * h[j]);
                g.feat_b1[j] += daj;
                for i in 0..INPUT_DIM {
                    g.feat_w1[j * INPUT_DIM + i] += daj * x[i];
                }
            }
        }
        g
    }

    /// Widens the class head with zero-initialised rows for `new_classes`
    /// (inserted in ascending id order, before the no-object row).
    pub fn expand_classifier(&self, new_classes: &BTreeSet<ClassId>) -> Result<Model> {
        if let Some(dup) = new_classes.iter().find(|c| self.known_classes.contains(c)) {
            return Err(Error::Config(format!("class {dup} is already in the head")));
        }
        let d = self.d;
        let old = self.known_classes.len();
        let add = new_classes.len();
        let mut out = self.clone();
        out.known_classes.extend(new_classes.iter().copied());
        let mut class_w = self.params.class_w[..old * d].to_vec();
        class_w.extend(std::iter::repeat_n(0.0, add * d));
        class_w.extend_from_slice(&self.params.class_w[old * d..]);
        let mut class_b = self.params.class_b[..old].to_vec();
        class_b.extend(std::iter::repeat_n(0.0, add));
        class_b.push(self.params.class_b[old]);
        out.params.class_w = class_w;
        out.params.class_b = class_b;
        Ok(out)
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * self.params.num_values());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in [INPUT_DIM, self.d, self.num_queries, self.known_classes.len()] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for c in &self.known_classes {
            out.extend_from_slice(&c.0.to_le_bytes());
        }
        for t in self.params.tensors() {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Model> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(bad("truncated checkpoint"));
            }
            let (head, rest) = cur.split_at(n);
            cur = rest;
            Ok(head)
        };
        if take(8)? != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut read_u64 = || -> Result<u64> { Ok(u64::from_le_bytes(take(8)?.try_into().unwrap())) };
        let input_dim = read_u64()?;
        let d = read_u64()? as usize;
        let qn = read_u64()? as usize;
        let k = read_u64()? as usize;
        if input_dim != INPUT_DIM as u64 {
            return Err(Error::Checkpoint(format!("input dim {input_dim} != {INPUT_DIM}")));
        }
        if d == 0 || qn == 0 || d > 1 << 16 || qn > 1 << 16 || k > 1 << 20 {
            return Err(bad("implausible header dimensions"));
        }
        let mut known = Vec::with_capacity(k);
        for _ in 0..k {
            known.push(ClassId(u32::from_le_bytes(take(4)?.try_into().unwrap())));
        }
        let unique: BTreeSet<_> = known.iter().collect();
        if unique.len() != known.len() {
            return Err(bad("duplicate class ids in header"));
        }
        let heads = k + 1;
        let sizes = [d * INPUT_DIM, d, d * d, d, qn * d, heads * d, heads, qn * d];
        let mut tensors: Vec<Vec<f64>> = Vec::with_capacity(8);
        for n in sizes {
            let raw = take(n * 8)?;
            tensors.push(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            );
        }
        if !cur.is_empty() {
            return Err(bad("trailing bytes after parameters"));
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().unwrap();
        let params = Params {
            feat_w1: next(),
            feat_b1: next(),
            feat_w2: next(),
            feat_b2: next(),
            queries: next(),
            class_w: next(),
            class_b: next(),
            mask_emb: next(),
        };
        if !params.all_finite() {
            return Err(bad("non-finite parameter"));
        }
        Ok(Model {
            d,
            num_queries: qn,
            known_classes: known,
            params,
        })
    }
}
