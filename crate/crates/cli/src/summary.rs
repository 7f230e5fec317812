//! Ablation summary: one row per mechanism stack, per-split mAP50 for every
//! phase, then FPP.

use serde::{Deserialize, Serialize};

use climb3d::continual::PhaseResult;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseCells {
    pub phase: usize,
    /// mAP50 on the classes of each split introduced so far.
    pub splits: Vec<Option<f64>>,
    /// mAP50 over all classes seen so far; omitted for phase 1, where it
    /// equals the single split.
    pub all: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub phases: Vec<PhaseCells>,
    pub fpp_map50: Option<f64>,
    pub fpp_map25: Option<f64>,
}

impl SummaryRow {
    pub fn new(label: String, results: &[PhaseResult], fpp_map50: Option<f64>, fpp_map25: Option<f64>) -> Self {
        let phases = results
            .iter()
            .map(|r| PhaseCells {
                phase: r.phase,
                splits: r.report.splits.iter().map(|s| s.mean.map50).collect(),
                all: (r.phase > 1).then_some(r.report.all.map50).flatten(),
            })
            .collect();
        Self {
            label,
            phases,
            fpp_map50,
            fpp_map25,
        }
    }

    /// Overall mAP50 after the last phase.
    pub fn final_all(&self) -> Option<f64> {
        self.phases.last().and_then(|p| if p.phase == 1 { p.splits[0] } else { p.all })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub metric: String,
    pub rows: Vec<SummaryRow>,
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x))
}

fn pp(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

impl Summary {
    fn header(&self) -> Vec<String> {
        let mut cols = vec!["row".to_string(), "modules".to_string()];
        if let Some(first) = self.rows.first() {
            for p in &first.phases {
                for s in 1..=p.splits.len() {
                    cols.push(format!("p{}_s{s}", p.phase));
                }
                if p.phase > 1 {
                    cols.push(format!("p{}_all", p.phase));
                }
            }
        }
        cols.push("fpp".to_string());
        cols
    }

    fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut cells = vec![format!("{}", i + 1), row.label.clone()];
                for p in &row.phases {
                    cells.extend(p.splits.iter().map(|v| pct(*v)));
                    if p.phase > 1 {
                        cells.push(pct(p.all));
                    }
                }
                cells.push(pp(row.fpp_map50));
                cells
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header().join(",");
        out.push('\n');
        for row in self.cells() {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let header = self.header();
        let mut out = format!("| {} |\n", header.join(" | "));
        out.push_str(&format!("|{}\n", "---|".repeat(header.len())));
        for row in self.cells() {
            out.push_str(&format!("| {} |\n", row.join(" | ")));
        }
        out
    }
}
