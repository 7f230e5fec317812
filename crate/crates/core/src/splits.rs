//! Incremental scenarios: ordered, disjoint class partitions of the catalog.
//!
//! * frequency: classes by descending weight, chunked into phases;
//! * semantic: whole semantic groups dealt round-robin to phases;
//! * random: seeded shuffle, chunked.
//!
//! Ties are always broken by ascending class id.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ClassCatalog, ClassId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Frequency,
    Semantic,
    Random,
}

impl std::str::FromStr for SplitKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "frequency" | "a" | "split-a" => Ok(Self::Frequency),
            "semantic" | "b" | "split-b" => Ok(Self::Semantic),
            "random" | "c" | "split-c" => Ok(Self::Random),
            other => Err(Error::Config(format!("unknown split kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPlan {
    pub phases: Vec<BTreeSet<ClassId>>,
    pub kind: SplitKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ScenarioPlan {
    pub fn num_phases(&self) -> usize {
        self.phases.len()
    }

    /// Classes seen through phase `t` (1-based).
    pub fn seen_through(&self, t: usize) -> BTreeSet<ClassId> {
        self.phases[..t].iter().flatten().copied().collect()
    }

    pub fn phase_of(&self, class: ClassId) -> Option<usize> {
        self.phases.iter().position(|p| p.contains(&class)).map(|i| i + 1)
    }

    /// Disjointness, coverage and non-emptiness against `catalog`.
    pub fn check(&self, catalog: &ClassCatalog) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (i, phase) in self.phases.iter().enumerate() {
            if phase.is_empty() {
                return Err(Error::Config(format!("phase {} is empty", i + 1)));
            }
            for c in phase {
                if !seen.insert(*c) {
                    return Err(Error::Config(format!("class {c} appears in two phases")));
                }
            }
        }
        let all: BTreeSet<ClassId> = catalog.class_ids().collect();
        if seen != all {
            return Err(Error::Config("phases do not cover the catalog".into()));
        }
        Ok(())
    }
}

fn check_phase_count(catalog: &ClassCatalog, num_phases: usize) -> Result<()> {
    if num_phases == 0 {
        return Err(Error::Config("num_phases must be at least 1".into()));
    }
    if num_phases > catalog.len() {
        return Err(Error::Config(format!(
            "{num_phases} phases requested for {} classes",
            catalog.len()
        )));
    }
    Ok(())
}

/// Splits an ordered list into `n` contiguous chunks whose sizes differ by at
/// most one, with the larger chunks first.
fn chunk(ordered: &[ClassId], n: usize) -> Vec<BTreeSet<ClassId>> {
    let base = ordered.len() / n;
    let extra = ordered.len() % n;
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let size = base + usize::from(i < extra);
        out.push(ordered[start..start + size].iter().copied().collect());
        start += size;
    }
    out
}

pub fn build_split_a(catalog: &ClassCatalog, num_phases: usize) -> Result<ScenarioPlan> {
    check_phase_count(catalog, num_phases)?;
    let mut entries: Vec<_> = catalog.entries().iter().collect();
    entries.sort_by(|a, b| {
        b.target_frequency_weight
            .total_cmp(&a.target_frequency_weight)
            .then(a.class_id.cmp(&b.class_id))
    });
    let ordered: Vec<ClassId> = entries.iter().map(|e| e.class_id).collect();
    Ok(ScenarioPlan {
        phases: chunk(&ordered, num_phases),
        kind: SplitKind::Frequency,
        seed: None,
    })
}

pub fn build_split_b(catalog: &ClassCatalog, num_phases: usize) -> Result<ScenarioPlan> {
    if num_phases == 0 {
        return Err(Error::Config("num_phases must be at least 1".into()));
    }
    let mut groups: BTreeMap<u32, BTreeSet<ClassId>> = BTreeMap::new();
    for e in catalog.entries() {
        groups.entry(e.semantic_group_id).or_default().insert(e.class_id);
    }
    if groups.len() < num_phases {
        return Err(Error::Config(format!(
            "{} semantic groups cannot fill {num_phases} phases",
            groups.len()
        )));
    }
    let mut phases = vec![BTreeSet::new(); num_phases];
    for (k, members) in groups.into_values().enumerate() {
        phases[k % num_phases].extend(members);
    }
    Ok(ScenarioPlan {
        phases,
        kind: SplitKind::Semantic,
        seed: None,
    })
}

pub fn build_split_c(catalog: &ClassCatalog, num_phases: usize, seed: u64) -> Result<ScenarioPlan> {
    check_phase_count(catalog, num_phases)?;
    let mut ordered: Vec<ClassId> = catalog.class_ids().collect();
    ordered.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(ScenarioPlan {
        phases: chunk(&ordered, num_phases),
        kind: SplitKind::Random,
        seed: Some(seed),
    })
}

pub fn build_split(
    catalog: &ClassCatalog,
    kind: SplitKind,
    num_phases: usize,
    seed: u64,
) -> Result<ScenarioPlan> {
    match kind {
        SplitKind::Frequency => build_split_a(catalog, num_phases),
        SplitKind::Semantic => build_split_b(catalog, num_phases),
        SplitKind::Random => build_split_c(catalog, num_phases, seed),
    }
}
