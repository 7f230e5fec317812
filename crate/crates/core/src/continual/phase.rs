//! Phase-wise training with exemplar replay, pseudo-labels from a frozen
//! copy of the previous model, and class-balanced re-weighting.

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::continual::exemplar::{select_exemplars, ExemplarStore};
use crate::continual::frequency::{
    accumulate_frequencies, compute_class_weights, FrequencyTable, WeightRange, WeightTable,
};
use crate::continual::pseudo::{PseudoCandidates, PseudoLabelSet, PseudoOrigin};
use crate::continual::targets::{build_supervision, AugmentedTargets, TargetOrigin};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricReport, PhaseHistory};
use crate::model::{train_step, LossConfig, Model};
use crate::types::{ClassId, Dataset};

/// Switches and hyperparameters for the three mechanisms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mechanisms {
    pub er: bool,
    pub exemplar_budget: usize,
    pub plg: bool,
    pub top_k: usize,
    pub min_score: f64,
    pub cbr: bool,
    pub epsilon: f64,
    pub weight_cap: f64,
}

impl Mechanisms {
    pub fn naive() -> Self {
        Self {
            er: false,
            plg: false,
            cbr: false,
            ..Self::full()
        }
    }

    pub fn full() -> Self {
        Self {
            er: true,
            exemplar_budget: 5,
            plg: true,
            top_k: 8,
            min_score: 0.5,
            cbr: true,
            epsilon: 1e-8,
            weight_cap: 1e3,
        }
    }

    /// The cumulative ablation stacks: naive, +ER, +PLG, +CBR.
    pub fn ablation_stack(base: &Mechanisms) -> Vec<Mechanisms> {
        let with = |er, plg, cbr| Mechanisms {
            er,
            plg,
            cbr,
            ..base.clone()
        };
        vec![
            with(false, false, false),
            with(true, false, false),
            with(true, true, false),
            with(true, true, true),
        ]
    }

    pub fn label(&self) -> String {
        match (self.er, self.plg, self.cbr) {
            (false, false, false) => "naive".into(),
            (true, false, false) => "+ER".into(),
            (true, true, false) => "+PLG".into(),
            (true, true, true) => "+CBR".into(),
            (er, plg, cbr) => {
                let parts: Vec<&str> = [(er, "ER"), (plg, "PLG"), (cbr, "CBR")]
                    .iter()
                    .filter(|(on, _)| *on)
                    .map(|(_, n)| *n)
                    .collect();
                parts.join("+")
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cbr && !self.plg {
            return Err(Error::Config("cbr requires plg".into()));
        }
        if !(0.0..=1.0).contains(&self.min_score) {
            return Err(Error::Config(format!("min_score {} outside [0, 1]", self.min_score)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.weight_cap > 0.0) {
            return Err(Error::Config(format!("weight_cap must be positive, got {}", self.weight_cap)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs_per_phase: usize,
    pub learn_rate: f64,
    pub loss: LossConfig,
    pub num_queries: usize,
    pub feature_dim: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs_per_phase: 12,
            learn_rate: 0.05,
            loss: LossConfig::default(),
            num_queries: 24,
            feature_dim: 32,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_per_phase == 0 || self.num_queries == 0 || self.feature_dim == 0 {
            return Err(Error::Config(
                "epochs_per_phase, num_queries and feature_dim must be positive".into(),
            ));
        }
        if !(self.learn_rate >= 0.0 && self.learn_rate.is_finite()) {
            return Err(Error::Config(format!("learn_rate {} must be >= 0", self.learn_rate)));
        }
        let l = &self.loss;
        if !(l.lambda >= 0.0 && l.lambda_cls >= 0.0 && l.no_object_weight >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinualConfig {
    pub mechanisms: Mechanisms,
    pub training: TrainingConfig,
}

impl ContinualConfig {
    pub fn validate(&self) -> Result<()> {
        self.mechanisms.validate()?;
        self.training.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContinualState {
    pub model: Model,
    /// Snapshot of the model as it was before the most recent phase.
    pub frozen: Option<Model>,
    pub store: ExemplarStore,
    pub frequency: Option<FrequencyTable>,
    pub selection_weights: Option<WeightTable>,
    pub loss_weights: Option<WeightTable>,
    pub history: PhaseHistory,
    pub known_classes: BTreeSet<ClassId>,
}

impl ContinualState {
    /// Fresh model whose head holds only the no-object entry.
    pub fn new(config: &ContinualConfig) -> Self {
        let t = &config.training;
        Self {
            model: Model::new(t.feature_dim, t.num_queries, Vec::new(), t.seed),
            frozen: None,
            store: ExemplarStore::new(config.mechanisms.exemplar_budget),
            frequency: None,
            selection_weights: None,
            loss_weights: None,
            history: PhaseHistory::default(),
            known_classes: BTreeSet::new(),
        }
    }

    pub fn phases_done(&self) -> usize {
        self.history.len()
    }
}

/// Inputs for one phase. `train` carries only this phase's labels; `eval`
/// carries labels for every class seen so far.
#[derive(Clone, Copy, Debug)]
pub struct PhaseInput<'a> {
    /// 1-based phase index.
    pub index: usize,
    pub classes: &'a BTreeSet<ClassId>,
    pub train: &'a Dataset,
    pub eval: &'a Dataset,
    /// Class sets of phases `1..=index`, for per-split aggregates.
    pub splits: &'a [BTreeSet<ClassId>],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub gt_targets: usize,
    pub plg_targets: usize,
    pub cbr_targets: usize,
    pub replay_steps: usize,
    /// Class counts accumulated during the epoch.
    pub frequency: BTreeMap<ClassId, f64>,
    /// Loss weights in effect for the next epoch, when CBR is active.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_weights: Option<BTreeMap<ClassId, f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseResult {
    pub phase: usize,
    pub classes: BTreeSet<ClassId>,
    pub epochs: Vec<EpochStats>,
    pub store_size: usize,
    pub report: MetricReport,
}

fn mix_seed(seed: u64, tag: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finaliser over a simple combination.
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(a.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(b.wrapping_mul(0x94D0_49BB_1331_11EB));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_SHUFFLE: u64 = 1;
const TAG_REPLAY: u64 = 2;
const TAG_EXEMPLAR: u64 = 3;

pub fn run_phase(
    state: ContinualState,
    phase: PhaseInput<'_>,
    config: &ContinualConfig,
) -> Result<(ContinualState, PhaseResult)> {
    config.validate()?;
    let mech = &config.mechanisms;
    let train_cfg = &config.training;
    let t = phase.index;
    let ctx = |e: Error| match e {
        Error::Config(msg) => Error::Config(format!("phase {t}: {msg}")),
        other => other,
    };
    if let Some(c) = phase.classes.intersection(&state.known_classes).next() {
        return Err(Error::Config(format!("phase {t}: class {c} was already learned")));
    }
    if phase.classes.is_empty() {
        return Err(Error::Config(format!("phase {t}: empty class set")));
    }

    let old_classes = state.known_classes.clone();
    let seen: BTreeSet<ClassId> = old_classes.union(phase.classes).copied().collect();
    let frozen = (!old_classes.is_empty()).then(|| state.model.clone());
    let mut model = state.model.expand_classifier(phase.classes).map_err(ctx)?;

    let use_plg = mech.plg && frozen.is_some();
    let use_cbr = mech.cbr && use_plg;
    let candidates: Vec<PseudoCandidates> = match (&frozen, use_plg) {
        (Some(f), true) => phase
            .train
            .scenes
            .iter()
            .map(|s| Ok(PseudoCandidates::from_prediction(&f.forward(s)?, mech.min_score)))
            .collect::<Result<_>>()?,
        _ => Vec::new(),
    };

    let mut selection_weights = WeightTable::uniform(old_classes.iter().copied());
    let mut loss_weights = WeightTable::uniform(seen.iter().copied());
    let mut frequency = FrequencyTable::new(&old_classes, phase.classes);
    let replay: Vec<&crate::types::Scene> = if mech.er {
        state.store.entries.iter().map(|e| &e.scene).collect()
    } else {
        Vec::new()
    };

    let empty_plg = PseudoLabelSet::empty(PseudoOrigin::Plg);
    let empty_cbr = PseudoLabelSet::empty(PseudoOrigin::Cbr);
    let mut epochs = Vec::with_capacity(train_cfg.epochs_per_phase);
    for epoch in 0..train_cfg.epochs_per_phase {
        if epoch > 0 {
            frequency.reset();
        }
        let mut stats = EpochStats {
            epoch: epoch + 1,
            mean_loss: 0.0,
            gt_targets: 0,
            plg_targets: 0,
            cbr_targets: 0,
            replay_steps: 0,
            frequency: BTreeMap::new(),
            loss_weights: None,
        };
        let mut loss_sum = 0.0;
        let mut steps = 0usize;

        let mut order: Vec<usize> = (0..phase.train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(
            train_cfg.seed,
            TAG_SHUFFLE,
            t as u64,
            epoch as u64,
        )));
        for &i in &order {
            let scene = &phase.train.scenes[i];
            let (plg, cbr) = if use_plg {
                let plg = candidates[i].top_k(mech.top_k);
                let cbr = if use_cbr {
                    candidates[i].reweighted_top_k(&selection_weights, mech.top_k)?
                } else {
                    empty_cbr.clone()
                };
                (plg, cbr)
            } else {
                (empty_plg.clone(), empty_cbr.clone())
            };
            accumulate_frequencies(&mut frequency, &plg, &scene.instances)?;
            let targets = build_supervision(&scene.instances, &plg, &cbr);
            stats.gt_targets += targets.count(TargetOrigin::Gt);
            stats.plg_targets += targets.count(TargetOrigin::Plg);
            stats.cbr_targets += targets.count(TargetOrigin::Cbr);
            let step = train_step(
                &mut model,
                scene,
                &targets,
                &loss_weights,
                train_cfg.learn_rate,
                &train_cfg.loss,
            )
            .map_err(|e| phase_error(e, t, epoch + 1, &scene.scene_id))?;
            loss_sum += step.loss;
            steps += 1;
        }

        let mut replay_order: Vec<usize> = (0..replay.len()).collect();
        replay_order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(
            train_cfg.seed,
            TAG_REPLAY,
            t as u64,
            epoch as u64,
        )));
        for &i in &replay_order {
            let scene = replay[i];
            accumulate_frequencies(&mut frequency, &empty_plg, &scene.instances)?;
            let targets = AugmentedTargets::from_gt(&scene.instances);
            let step = train_step(
                &mut model,
                scene,
                &targets,
                &loss_weights,
                train_cfg.learn_rate,
                &train_cfg.loss,
            )
            .map_err(|e| phase_error(e, t, epoch + 1, &scene.scene_id))?;
            loss_sum += step.loss;
            steps += 1;
            stats.replay_steps += 1;
        }

        if use_cbr {
            selection_weights =
                compute_class_weights(&frequency, mech.epsilon, WeightRange::OldOnly, mech.weight_cap)?;
            loss_weights =
                compute_class_weights(&frequency, mech.epsilon, WeightRange::AllSeen, mech.weight_cap)?
                    .normalized_to_mean_one();
            stats.loss_weights = Some(loss_weights.weights.clone());
        }
        stats.frequency = frequency.counts.clone();
        stats.mean_loss = if steps == 0 { 0.0 } else { loss_sum / steps as f64 };
        debug!(
            "phase {t} epoch {}: loss {:.4}, targets gt/plg/cbr {}/{}/{}",
            stats.epoch, stats.mean_loss, stats.gt_targets, stats.plg_targets, stats.cbr_targets
        );
        epochs.push(stats);
    }

    let mut store = state.store;
    if mech.er {
        let picked = select_exemplars(
            phase.train,
            mech.exemplar_budget,
            mix_seed(train_cfg.seed, TAG_EXEMPLAR, t as u64, 0),
        );
        store.add_phase(t, picked);
    }

    let report = evaluate(&model, phase.eval, phase.splits, false)?;
    info!(
        "phase {t} done: mAP50 {:?}, store {} scenes",
        report.all.map50,
        store.len()
    );
    let mut history = state.history;
    history.push(t, report.clone());

    let next = ContinualState {
        model,
        frozen,
        store,
        frequency: Some(frequency),
        selection_weights: use_cbr.then_some(selection_weights),
        loss_weights: use_cbr.then_some(loss_weights),
        history,
        known_classes: seen,
    };
    let result = PhaseResult {
        phase: t,
        classes: phase.classes.clone(),
        epochs,
        store_size: next.store.len(),
        report,
    };
    Ok((next, result))
}

fn phase_error(e: Error, phase: usize, epoch: usize, scene: &str) -> Error {
    match e {
        Error::NumericFault { layer } => {
            log::error!("numeric fault at phase {phase}, epoch {epoch}, scene {scene}");
            Error::NumericFault { layer }
        }
        Error::Config(msg) => Error::Config(format!("phase {phase}, epoch {epoch}, scene {scene}: {msg}")),
        other => other,
    }
}
