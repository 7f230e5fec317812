//! Deterministic synthetic scene generator with long-tailed class frequencies.
//!
//! Every instance is an anisotropic Gaussian blob whose colour and shape are
//! fixed functions of its class id. The rest of the scene is grey clutter with
//! no label.

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BitMask;
use crate::types::{ClassCatalog, ClassId, Dataset, InstanceLabel, Point, Scene};

pub const SCENE_EXTENT: f64 = 10.0;
pub const MIN_POINTS_PER_INSTANCE: usize = 8;
const BACKGROUND_FRACTION: f64 = 0.25;
const CENTER_MARGIN: f64 = 1.5;
const MIN_CENTER_DISTANCE: f64 = 2.5;
const PLACEMENT_RETRIES: usize = 500;
const COLOR_JITTER: f64 = 0.04;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub catalog: ClassCatalog,
    pub scenes_per_dataset: usize,
    pub points_per_scene: usize,
    pub instances_per_scene: (usize, usize),
    pub noise_sigma: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    /// 12-class geometric tail, 1024 points, 3 to 8 instances per scene.
    pub fn default_benchmark(seed: u64) -> Self {
        Self {
            catalog: ClassCatalog::default_benchmark(),
            scenes_per_dataset: 200,
            points_per_scene: 1024,
            instances_per_scene: (3, 8),
            noise_sigma: 0.02,
            seed,
        }
    }

    fn instance_points(&self) -> usize {
        self.points_per_scene - background_points(self.points_per_scene)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.instances_per_scene;
        if lo > hi {
            return Err(Error::Config(format!("instances_per_scene min {lo} > max {hi}")));
        }
        if self.points_per_scene == 0 {
            return Err(Error::Config("points_per_scene must be positive".into()));
        }
        if self.instance_points() < hi * MIN_POINTS_PER_INSTANCE {
            return Err(Error::Config(format!(
                "{} points cannot host {hi} instances of {MIN_POINTS_PER_INSTANCE} points",
                self.points_per_scene
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise_sigma {} must be >= 0", self.noise_sigma)));
        }
        if hi > 0 && self.catalog.is_empty() {
            return Err(Error::Config("catalog is empty".into()));
        }
        Ok(())
    }
}

fn background_points(m: usize) -> usize {
    (m as f64 * BACKGROUND_FRACTION).floor() as usize
}

/// Draws instance classes proportionally to catalog frequency weights.
#[derive(Clone, Debug)]
pub struct ClassSampler {
    index: WeightedIndex<f64>,
}

impl ClassSampler {
    pub fn new(catalog: &ClassCatalog) -> Result<Self> {
        let weights = catalog.entries().iter().map(|e| e.target_frequency_weight);
        let index = WeightedIndex::new(weights).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self { index })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ClassId {
        ClassId(self.index.sample(rng) as u32)
    }
}

/// Per-class blob appearance: base colour and per-axis standard deviations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassAppearance {
    pub color: [f64; 3],
    pub sigma: [f64; 3],
}

impl ClassAppearance {
    pub fn for_class(id: ClassId) -> Self {
        // Golden-ratio hue spacing keeps neighbouring ids far apart in colour;
        // cycling brightness with period 3 separates ids whose hues nearly
        // coincide (i and i + 8 differ by 0.056 in hue).
        let hue = (id.0 as f64 * 0.618_033_988_749_895).fract();
        let value = [0.95, 0.7, 0.5][id.0 as usize % 3];
        let color = hsv_to_rgb(hue, 0.85, value);
        let mut rng = ChaCha8Rng::seed_from_u64(0xB10B ^ u64::from(id.0));
        let sigma = [
            rng.random_range(0.25..0.65),
            rng.random_range(0.25..0.65),
            rng.random_range(0.25..0.65),
        ];
        Self { color, sigma }
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h * 6.0;
    let sector = h6.floor() as i32 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn scene_rng(seed: u64, scene_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(scene_index as u64);
    rng
}

pub fn generate_scene(spec: &GeneratorSpec, scene_index: usize) -> Result<Scene> {
    spec.validate()?;
    let sampler = ClassSampler::new(&spec.catalog)?;
    let mut rng = scene_rng(spec.seed, scene_index);
    let m = spec.points_per_scene;
    let (lo, hi) = spec.instances_per_scene;
    let n_instances = rng.random_range(lo..=hi);

    let mut centers: Vec<[f64; 3]> = Vec::with_capacity(n_instances);
    let mut classes = Vec::with_capacity(n_instances);
    for _ in 0..n_instances {
        classes.push(sampler.sample(&mut rng));
        let center = place_center(&mut rng, &centers).ok_or_else(|| Error::Generation {
            scene_index,
            reason: format!("could not place blob {} after {PLACEMENT_RETRIES} tries", centers.len()),
        })?;
        centers.push(center);
    }

    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let instance_total = spec.instance_points();
    let mut points = Vec::with_capacity(m);
    let mut owner: Vec<Option<usize>> = Vec::with_capacity(m);
    for (j, (class, center)) in classes.iter().zip(&centers).enumerate() {
        let look = ClassAppearance::for_class(*class);
        let count = instance_total / n_instances + usize::from(j < instance_total % n_instances);
        for _ in 0..count {
            let mut xyz = [0.0; 3];
            for k in 0..3 {
                xyz[k] = center[k] + look.sigma[k] * unit.sample(&mut rng);
            }
            let mut rgb = [0.0; 3];
            for k in 0..3 {
                rgb[k] = (look.color[k] + COLOR_JITTER * unit.sample(&mut rng)).clamp(0.0, 1.0);
            }
            points.push((xyz, rgb));
            owner.push(Some(j));
        }
    }
    while points.len() < m {
        let xyz = [
            rng.random_range(0.0..SCENE_EXTENT),
            rng.random_range(0.0..SCENE_EXTENT),
            rng.random_range(0.0..SCENE_EXTENT),
        ];
        let grey: f64 = rng.random_range(0.2..0.8);
        let rgb = [0, 1, 2].map(|_| (grey + 0.02 * unit.sample(&mut rng)).clamp(0.0, 1.0));
        points.push((xyz, rgb));
        owner.push(None);
    }

    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);

    let mut out_points = Vec::with_capacity(m);
    let mut masks = vec![BitMask::zeros(m); n_instances];
    for (dst, &src) in order.iter().enumerate() {
        let (xyz, rgb) = points[src];
        let jitter = |rng: &mut ChaCha8Rng, v: f64| {
            let noisy = if spec.noise_sigma > 0.0 {
                v + spec.noise_sigma * unit.sample(rng)
            } else {
                v
            };
            noisy.clamp(0.0, SCENE_EXTENT)
        };
        out_points.push(Point {
            x: jitter(&mut rng, xyz[0]),
            y: jitter(&mut rng, xyz[1]),
            z: jitter(&mut rng, xyz[2]),
            r: rgb[0],
            g: rgb[1],
            b: rgb[2],
        });
        if let Some(j) = owner[src] {
            masks[j].set(dst, true);
        }
    }

    let instances = masks
        .into_iter()
        .zip(classes)
        .map(|(mask, class_id)| InstanceLabel { mask, class_id })
        .collect();
    Ok(Scene {
        points: out_points,
        instances,
        scene_id: format!("scene-{:016x}-{scene_index:05}", spec.seed),
    })
}

fn place_center(rng: &mut ChaCha8Rng, existing: &[[f64; 3]]) -> Option<[f64; 3]> {
    for _ in 0..PLACEMENT_RETRIES {
        let c = [0, 1, 2].map(|_| rng.random_range(CENTER_MARGIN..SCENE_EXTENT - CENTER_MARGIN));
        let clear = existing.iter().all(|e| {
            let d2: f64 = (0..3).map(|k| (e[k] - c[k]).powi(2)).sum();
            d2 >= MIN_CENTER_DISTANCE * MIN_CENTER_DISTANCE
        });
        if clear {
            return Some(c);
        }
    }
    None
}

pub fn generate_dataset(spec: &GeneratorSpec) -> Result<Dataset> {
    generate_scene_range(spec, 0, spec.scenes_per_dataset)
}

/// Generates scenes `start..start + count`; disjoint ranges give disjoint
/// scene sets under one generator spec (used to carve an evaluation set).
pub fn generate_scene_range(spec: &GeneratorSpec, start: usize, count: usize) -> Result<Dataset> {
    spec.validate()?;
    let scenes = (start..start + count)
        .map(|i| generate_scene(spec, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        scenes,
        visible_classes: spec.catalog.class_ids().collect(),
    })
}

/// Removes labels outside `class_set`; geometry is kept, so objects of hidden
/// classes stay in the scene unlabeled.
pub fn filter_labels(dataset: &Dataset, class_set: &BTreeSet<ClassId>) -> Dataset {
    let scenes = dataset
        .scenes
        .iter()
        .map(|s| Scene {
            points: s.points.clone(),
            instances: s
                .instances
                .iter()
                .filter(|i| class_set.contains(&i.class_id))
                .cloned()
                .collect(),
            scene_id: s.scene_id.clone(),
        })
        .collect();
    Dataset {
        scenes,
        visible_classes: class_set.clone(),
    }
}
