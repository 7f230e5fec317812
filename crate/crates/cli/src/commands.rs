//! Subcommand implementations.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::info;
use serde::Serialize;

use climb3d::continual::{run_remaining_phases, ContinualState, Mechanisms, PhaseResult};
use climb3d::eval::{evaluate, fpp, FppMetric, MetricReport, PhaseHistory};
use climb3d::model::Model;
use climb3d::scenegen::{filter_labels, generate_scene_range};
use climb3d::splits::{build_split, ScenarioPlan, SplitKind};
use climb3d::types::{ClassCatalog, ClassId, Dataset};

use crate::config::RunConfig;
use crate::output::RunDir;
use crate::summary::{Summary, SummaryRow};

/// Directory name for a mechanism stack.
pub fn row_slug(m: &Mechanisms) -> String {
    let label = m.label();
    let slug: String = label
        .trim_start_matches('+')
        .to_ascii_lowercase()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    slug
}

/// Failing stage plus cause; `cmd_run` writes both into the failure marker.
#[derive(Debug)]
pub struct StageError {
    pub stage: String,
    pub source: anyhow::Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} failed: {:#}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {}

trait Stage<T> {
    fn stage(self, name: impl Into<String>) -> std::result::Result<T, StageError>;
}

impl<T, E: Into<anyhow::Error>> Stage<T> for std::result::Result<T, E> {
    fn stage(self, name: impl Into<String>) -> std::result::Result<T, StageError> {
        self.map_err(|e| StageError {
            stage: name.into(),
            source: e.into(),
        })
    }
}

#[derive(Serialize)]
struct FppRecord {
    first_phase_classes: BTreeSet<ClassId>,
    map50: Option<f64>,
    map25: Option<f64>,
}

#[derive(Serialize)]
struct StateSnapshot<'a> {
    known_classes: &'a BTreeSet<ClassId>,
    store: &'a climb3d::continual::ExemplarStore,
    frequency: &'a Option<climb3d::continual::FrequencyTable>,
    selection_weights: &'a Option<climb3d::continual::WeightTable>,
    loss_weights: &'a Option<climb3d::continual::WeightTable>,
}

/// Outcome of a completed run.
#[derive(Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub summary: Summary,
    pub histories: Vec<(String, PhaseHistory)>,
    pub plan: ScenarioPlan,
}

/// Generates data, runs every configured mechanism stack through all phases
/// and writes reports, checkpoints and the summary table under `out_dir`.
pub fn cmd_run(config: &RunConfig, out_dir: &Path, overwrite: bool) -> Result<RunOutcome> {
    let dir = RunDir::create(out_dir, overwrite)?;
    match run_into(config, &dir) {
        Ok(outcome) => Ok(outcome),
        Err(e) => {
            let err = anyhow!("{e}");
            dir.mark_failed(&e.stage, &e.source);
            Err(err)
        }
    }
}

fn run_into(config: &RunConfig, dir: &RunDir) -> std::result::Result<RunOutcome, StageError> {
    config.validate().stage("config")?;
    dir.write_json("config.json", config).stage("write config")?;

    let gen = &config.generator;
    let train = generate_scene_range(gen, 0, gen.scenes_per_dataset).stage("generate training scenes")?;
    let eval = generate_scene_range(gen, gen.scenes_per_dataset, config.eval_scenes)
        .stage("generate evaluation scenes")?;
    let sc = &config.scenario;
    let plan = build_split(&gen.catalog, sc.kind, sc.num_phases, sc.seed).stage("build scenario")?;
    dir.write_json("plan.json", &plan).stage("write plan")?;

    let mut summary = Summary {
        metric: "mAP50".into(),
        rows: Vec::new(),
    };
    let mut histories = Vec::new();
    for mech in config.rows() {
        let label = mech.label();
        let slug = row_slug(&mech);
        let cfg = config.continual(&mech);
        info!("running {label}");
        let write_phase = |state: &ContinualState, result: &PhaseResult| -> Result<()> {
            let base = format!("{slug}/phase_{}", result.phase);
            dir.write_json(format!("{base}/report.json"), &result.report)?;
            dir.write_text(format!("{base}/report.csv"), &result.report.to_csv())?;
            dir.write_json(format!("{base}/epochs.json"), &result.epochs)?;
            dir.write_bytes(format!("{base}/model.ckpt"), &state.model.to_checkpoint_bytes())?;
            Ok(())
        };
        let (state, results) = run_remaining_phases(ContinualState::new(&cfg), &plan, &train, &eval, &cfg, write_phase)
            .stage(format!("run {label}"))?;

        let first = &plan.phases[0];
        let fpp_of = |metric| (state.history.len() >= 2).then(|| fpp(&state.history, first, metric)).transpose();
        let fpp50 = fpp_of(FppMetric::Map50).stage(format!("fpp {label}"))?;
        let fpp25 = fpp_of(FppMetric::Map25).stage(format!("fpp {label}"))?;
        let record = FppRecord {
            first_phase_classes: first.clone(),
            map50: fpp50,
            map25: fpp25,
        };
        let snapshot = StateSnapshot {
            known_classes: &state.known_classes,
            store: &state.store,
            frequency: &state.frequency,
            selection_weights: &state.selection_weights,
            loss_weights: &state.loss_weights,
        };
        (|| -> Result<()> {
            dir.write_json(format!("{slug}/history.json"), &state.history)?;
            dir.write_json(format!("{slug}/fpp.json"), &record)?;
            dir.write_bytes(format!("{slug}/state/model.ckpt"), &state.model.to_checkpoint_bytes())?;
            if let Some(frozen) = &state.frozen {
                dir.write_bytes(format!("{slug}/state/frozen.ckpt"), &frozen.to_checkpoint_bytes())?;
            }
            dir.write_json(format!("{slug}/state/state.json"), &snapshot)?;
            Ok(())
        })()
        .stage(format!("write {label}"))?;

        summary.rows.push(SummaryRow::new(label.clone(), &results, fpp50, fpp25));
        histories.push((label, state.history));
    }
    (|| -> Result<()> {
        dir.write_json("summary.json", &summary)?;
        dir.write_text("summary.csv", &summary.to_csv())?;
        dir.write_text("summary.md", &summary.to_markdown())?;
        Ok(())
    })()
    .stage("write summary")?;

    Ok(RunOutcome {
        out_dir: dir.root().to_path_buf(),
        summary,
        histories,
        plan,
    })
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Model::from_checkpoint_bytes(&bytes).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Evaluates a checkpoint on a dataset, over the classes the model knows.
/// Per-split aggregates follow the plan's phases.
pub fn cmd_eval(checkpoint: &Path, dataset: &Path, plan: &Path, with_miou: bool) -> Result<MetricReport> {
    let model = load_checkpoint(checkpoint)?;
    let data: Dataset = read_json(dataset)?;
    data.validate().context("invalid dataset")?;
    let plan: ScenarioPlan = read_json(plan)?;
    let planned: BTreeSet<ClassId> = plan.phases.iter().flatten().copied().collect();
    let known: BTreeSet<ClassId> = model.known_classes().iter().copied().collect();
    if let Some(c) = known.difference(&planned).next() {
        bail!("checkpoint head has class {c}, which the plan does not contain");
    }
    let splits: Vec<BTreeSet<ClassId>> = plan
        .phases
        .iter()
        .map(|p| p.intersection(&known).copied().collect::<BTreeSet<_>>())
        .filter(|p| !p.is_empty())
        .collect();
    let visible: BTreeSet<ClassId> = data.visible_classes.intersection(&known).copied().collect();
    let restricted = filter_labels(&data, &visible);
    Ok(evaluate(&model, &restricted, &splits, with_miou)?)
}

/// Builds a scenario plan from a catalog file, or the default catalog.
pub fn cmd_splits(catalog: Option<&Path>, kind: SplitKind, num_phases: usize, seed: u64) -> Result<ScenarioPlan> {
    let catalog = match catalog {
        Some(path) => read_json::<ClassCatalog>(path)?,
        None => ClassCatalog::default_benchmark(),
    };
    Ok(build_split(&catalog, kind, num_phases, seed)?)
}

/// Generates the training and evaluation datasets of a run configuration.
pub fn cmd_gen(config: &RunConfig) -> Result<(Dataset, Dataset)> {
    config.generator.validate()?;
    let gen = &config.generator;
    let train = generate_scene_range(gen, 0, gen.scenes_per_dataset)?;
    let eval = generate_scene_range(gen, gen.scenes_per_dataset, config.eval_scenes)?;
    Ok((train, eval))
}
