//! Run configuration: one JSON document naming every hyperparameter.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use climb3d::continual::{ContinualConfig, Mechanisms, TrainingConfig};
use climb3d::scenegen::GeneratorSpec;
use climb3d::splits::SplitKind;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: SplitKind,
    pub num_phases: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Training scenes are indices `0..scenes_per_dataset`; evaluation scenes
    /// follow them.
    pub generator: GeneratorSpec,
    pub eval_scenes: usize,
    pub scenario: ScenarioConfig,
    pub mechanisms: Mechanisms,
    pub training: TrainingConfig,
    /// Run the cumulative stack naive, +ER, +PLG, +CBR instead of the single
    /// configuration given by `mechanisms`.
    #[serde(default)]
    pub ablation: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Default desk-scale benchmark with every mechanism enabled.
    pub fn default_benchmark(seed: u64) -> Self {
        Self {
            generator: GeneratorSpec::default_benchmark(seed),
            eval_scenes: 50,
            scenario: ScenarioConfig {
                kind: SplitKind::Frequency,
                num_phases: 3,
                seed,
            },
            mechanisms: Mechanisms::full(),
            training: TrainingConfig {
                seed,
                ..TrainingConfig::default()
            },
            ablation: false,
            output_dir: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    /// Replaces the generator, scenario and training seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.generator.seed = seed;
        self.scenario.seed = seed;
        self.training.seed = seed;
        self
    }

    /// Mechanism stacks to run, one summary row each.
    pub fn rows(&self) -> Vec<Mechanisms> {
        if self.ablation {
            Mechanisms::ablation_stack(&self.mechanisms)
        } else {
            vec![self.mechanisms.clone()]
        }
    }

    pub fn continual(&self, mechanisms: &Mechanisms) -> ContinualConfig {
        ContinualConfig {
            mechanisms: mechanisms.clone(),
            training: self.training.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        if self.generator.scenes_per_dataset == 0 {
            bail!("generator.scenes_per_dataset must be positive");
        }
        if self.eval_scenes == 0 {
            bail!("eval_scenes must be positive");
        }
        if self.scenario.num_phases == 0 {
            bail!("scenario.num_phases must be positive");
        }
        for row in self.rows() {
            self.continual(&row).validate()?;
        }
        let m = &self.mechanisms;
        let needed = self.generator.instances_per_scene.1 + if m.plg { 2 * m.top_k } else { 0 };
        if self.training.num_queries < needed {
            bail!(
                "training.num_queries = {} cannot hold {} targets (max instances + 2 * top_k)",
                self.training.num_queries,
                needed
            );
        }
        Ok(())
    }
}
