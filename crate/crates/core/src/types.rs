//! Domain types shared across the engine: scenes, labels, the class catalog
//! and datasets.
//!
//! All of these serialize to JSON with the field names used here. Masks are
//! encoded as `{"len": M, "bits": <base64 of little-endian bit bytes>}`.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BitMask;

/// Index into the class catalog.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl ClassId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// One coloured point: coordinates in scene units, colour channels in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl Point {
    pub fn channels(&self) -> [f64; 6] {
        [self.x, self.y, self.z, self.r, self.g, self.b]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceLabel {
    pub mask: BitMask,
    pub class_id: ClassId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub points: Vec<Point>,
    pub instances: Vec<InstanceLabel>,
    pub scene_id: String,
}

impl Scene {
    pub fn num_points(&self) -> usize {
        self.points.len()
    }
}

/// Outcome of [`validate_scene`]; an empty violation list means the scene is valid.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self, scene_id: &str) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::InvalidScene {
                scene_id: scene_id.to_string(),
                violations: self.violations,
            })
        }
    }
}

pub const VIOLATION_NO_POINTS: &str = "scene has no points";
pub const VIOLATION_LENGTH: &str = "mask length mismatch";
pub const VIOLATION_EMPTY: &str = "empty mask";
pub const VIOLATION_OVERLAP: &str = "masks not disjoint";

/// Checks the structural invariants of a scene. Violations are reported once
/// per kind so the result does not depend on instance order.
pub fn validate_scene(scene: &Scene) -> ValidationReport {
    let m = scene.points.len();
    let mut kinds = BTreeSet::new();
    if m == 0 {
        kinds.insert(VIOLATION_NO_POINTS);
    }
    let mut covered = BitMask::zeros(m);
    for inst in &scene.instances {
        if inst.mask.len() != m {
            kinds.insert(VIOLATION_LENGTH);
            continue;
        }
        if !inst.mask.any() {
            kinds.insert(VIOLATION_EMPTY);
        }
        if covered.intersection_count(&inst.mask).unwrap_or(0) > 0 {
            kinds.insert(VIOLATION_OVERLAP);
        }
        for i in inst.mask.ones() {
            covered.set(i, true);
        }
    }
    ValidationReport {
        violations: kinds.into_iter().map(String::from).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub class_id: ClassId,
    pub name: String,
    pub semantic_group_id: u32,
    pub target_frequency_weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CatalogRepr", into = "CatalogRepr")]
pub struct ClassCatalog {
    entries: Vec<CatalogEntry>,
}

#[derive(Serialize, Deserialize)]
struct CatalogRepr {
    entries: Vec<CatalogEntry>,
}

impl TryFrom<CatalogRepr> for ClassCatalog {
    type Error = Error;
    fn try_from(repr: CatalogRepr) -> Result<Self> {
        ClassCatalog::new(repr.entries)
    }
}

impl From<ClassCatalog> for CatalogRepr {
    fn from(c: ClassCatalog) -> Self {
        CatalogRepr { entries: c.entries }
    }
}

impl ClassCatalog {
    /// Entries may arrive in any order; they are stored sorted by class id,
    /// which must cover `0..C` exactly.
    pub fn new(mut entries: Vec<CatalogEntry>) -> Result<Self> {
        entries.sort_by_key(|e| e.class_id);
        for (i, e) in entries.iter().enumerate() {
            if e.class_id.index() != i {
                return Err(Error::Config(format!(
                    "catalog class ids must be contiguous from 0; found {} at position {i}",
                    e.class_id
                )));
            }
            if !(e.target_frequency_weight.is_finite() && e.target_frequency_weight > 0.0) {
                return Err(Error::Config(format!(
                    "class {} has non-positive frequency weight {}",
                    e.class_id, e.target_frequency_weight
                )));
            }
        }
        Ok(Self { entries })
    }

    /// The desk-scale benchmark catalog: 12 classes whose weights decay
    /// geometrically from 50 to 1, spread over 4 semantic groups.
    pub fn default_benchmark() -> Self {
        const NAMES: [&str; 12] = [
            "chair", "table", "door", "cabinet", "shelf", "bed", "sofa", "sink", "lamp",
            "bathtub", "piano", "fire extinguisher",
        ];
        let ratio: f64 = (1.0f64 / 50.0).powf(1.0 / 11.0);
        let entries = NAMES
            .iter()
            .enumerate()
            .map(|(i, name)| CatalogEntry {
                class_id: ClassId(i as u32),
                name: (*name).to_string(),
                semantic_group_id: (i % 4) as u32,
                target_frequency_weight: if i == 11 { 1.0 } else { 50.0 * ratio.powi(i as i32) },
            })
            .collect();
        Self::new(entries).expect("default catalog is valid")
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ClassId) -> Option<&CatalogEntry> {
        self.entries.get(id.index())
    }

    pub fn contains(&self, id: ClassId) -> bool {
        id.index() < self.entries.len()
    }

    pub fn class_ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.entries.iter().map(|e| e.class_id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub scenes: Vec<Scene>,
    pub visible_classes: BTreeSet<ClassId>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    /// Checks every scene plus the label-visibility invariant.
    pub fn validate(&self) -> Result<()> {
        for scene in &self.scenes {
            validate_scene(scene).into_result(&scene.scene_id)?;
            if let Some(bad) = scene
                .instances
                .iter()
                .find(|i| !self.visible_classes.contains(&i.class_id))
            {
                return Err(Error::InvalidScene {
                    scene_id: scene.scene_id.clone(),
                    violations: vec![format!("class {} is not visible", bad.class_id)],
                });
            }
        }
        Ok(())
    }
}
