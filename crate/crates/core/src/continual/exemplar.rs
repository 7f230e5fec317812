use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::types::{Dataset, Scene};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExemplarEntry {
    /// The scene with the labels that were visible when it was stored.
    pub scene: Scene,
    pub source_phase: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExemplarStore {
    pub entries: Vec<ExemplarEntry>,
    pub per_phase_budget: usize,
}

impl ExemplarStore {
    pub fn new(per_phase_budget: usize) -> Self {
        Self {
            entries: Vec::new(),
            per_phase_budget,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn add_phase(&mut self, phase: usize, scenes: Vec<Scene>) {
        debug_assert!(scenes.len() <= self.per_phase_budget);
        self.entries
            .extend(scenes.into_iter().map(|scene| ExemplarEntry { scene, source_phase: phase }));
    }

    pub fn from_phase(&self, phase: usize) -> impl Iterator<Item = &ExemplarEntry> {
        self.entries.iter().filter(move |e| e.source_phase == phase)
    }
}

/// Uniform sample of `budget` scenes without replacement, kept in dataset
/// order; everything when `budget >= |dataset|`.
pub fn select_exemplars(dataset: &Dataset, budget: usize, seed: u64) -> Vec<Scene> {
    let n = dataset.len();
    if budget >= n {
        return dataset.scenes.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, n, budget).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| dataset.scenes[i].clone()).collect()
}
