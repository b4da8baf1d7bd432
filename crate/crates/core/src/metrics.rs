//! Overlap metrics and per-case reports.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::LabelVolume;

/// `(|A and B|, |A|, |B|)` for voxels equal to `label`.
fn counts(a: &LabelVolume, b: &LabelVolume, label: u8) -> Result<(usize, usize, usize)> {
    if !a.grid().same_frame(b.grid()) {
        return Err(Error::FrameMismatch("masks are on different grids".into()));
    }
    let mut both = 0;
    let mut na = 0;
    let mut nb = 0;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (ia, ib) = (x == label, y == label);
        na += usize::from(ia);
        nb += usize::from(ib);
        both += usize::from(ia && ib);
    }
    Ok((both, na, nb))
}

/// Jaccard index in percent; two empty masks score 100.
pub fn jaccard(a: &LabelVolume, b: &LabelVolume, label: u8) -> Result<f64> {
    let (both, na, nb) = counts(a, b, label)?;
    let union = na + nb - both;
    Ok(if union == 0 { 100.0 } else { 100.0 * both as f64 / union as f64 })
}

/// Dice overlap in percent; two empty masks score 100.
pub fn dice(a: &LabelVolume, b: &LabelVolume, label: u8) -> Result<f64> {
    let (both, na, nb) = counts(a, b, label)?;
    Ok(if na + nb == 0 { 100.0 } else { 200.0 * both as f64 / (na + nb) as f64 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub id: String,
    /// `None` when the case failed.
    pub ji: Option<f64>,
    pub dice: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Option<Summary> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Summary { mean, sd: var.sqrt() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub cases: Vec<CaseResult>,
    pub ji: Option<Summary>,
    pub dice: Option<Summary>,
    pub failed: Vec<String>,
}

impl OverlapReport {
    /// Aggregates over successful cases, keeping input order.
    pub fn from_cases(cases: Vec<CaseResult>) -> Self {
        let ji: Vec<f64> = cases.iter().filter_map(|c| c.ji).collect();
        let dice: Vec<f64> = cases.iter().filter_map(|c| c.dice).collect();
        let failed = cases.iter().filter(|c| c.error.is_some()).map(|c| c.id.clone()).collect();
        OverlapReport { ji: Summary::of(&ji), dice: Summary::of(&dice), cases, failed }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,ji,dice,status\n");
        for c in &self.cases {
            let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
            let status = match &c.error {
                None => "ok".to_string(),
                Some(e) => format!("\"failed: {}\"", e.replace('"', "'")),
            };
            let _ = writeln!(s, "{},{},{},{}", c.id, f(c.ji), f(c.dice), status);
        }
        s
    }

    /// Writes `report.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("report.csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join("report.json");
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(&json, e))?;
        std::fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))
    }
}
