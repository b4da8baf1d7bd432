//! Leave-one-out evaluation of localisation and segmentation.

use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::forest::{estimate_bounding_box, train_from_cases, ForestParams, RegressionForest};
use crate::metrics::{dice, jaccard, CaseResult, OverlapReport};
use crate::phantom::Manifest;
use crate::pipeline::{build_database, segment_case, DatabaseCase, Segmentation};
use crate::rng::derive_seed;
use crate::volume::io::{read_labels, read_volume_auto, write_labels};
use crate::volume::{BoundingBox6, LabelVolume, Volume3D};

/// A manifest case held in memory.
#[derive(Clone, Debug)]
pub struct LoadedCase {
    pub id: String,
    pub ct: Volume3D,
    pub label: LabelVolume,
    /// Ground-truth box of label 1.
    pub bbox: BoundingBox6,
}

pub fn load_cases(manifest: &Manifest) -> Result<Vec<LoadedCase>> {
    manifest
        .cases
        .iter()
        .map(|c| {
            let ct = read_volume_auto(manifest.resolve(&c.ct))?;
            let label = read_labels(manifest.resolve(&c.label))?;
            if !ct.grid().same_frame(label.grid()) {
                return Err(Error::FrameMismatch(format!("case {}: CT and label grids differ", c.id)));
            }
            let bbox = label.bounding_box(1).ok_or_else(|| Error::Stage(format!("case {} has an empty label", c.id)))?;
            Ok(LoadedCase { id: c.id.clone(), ct, label, bbox })
        })
        .collect()
}

/// Forest parameters for the fold that holds out case `fold`.
pub fn fold_forest_params(params: &ForestParams, fold: usize) -> ForestParams {
    ForestParams { seed: derive_seed(params.seed, &[fold as u64]), ..params.clone() }
}

/// Trains on every case except `exclude` using ground-truth boxes.
pub fn train_excluding(cases: &[LoadedCase], exclude: Option<usize>, params: &ForestParams) -> Result<RegressionForest> {
    let training = cases.iter().enumerate().filter(|&(i, _)| Some(i) != exclude).map(|(_, c)| (&c.ct, c.bbox));
    train_from_cases(training, params)
}

/// Segments case `fold` with a forest and database built from the others.
pub fn segment_fold(cases: &[LoadedCase], fold: usize, config: &PipelineConfig, jobs: usize) -> Result<Segmentation> {
    let forest = train_excluding(cases, Some(fold), &fold_forest_params(&config.forest, fold))?;
    let db_cases: Vec<DatabaseCase> = cases
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != fold)
        .map(|(_, c)| DatabaseCase { id: &c.id, ct: &c.ct, label: &c.label })
        .collect();
    let database = build_database(&db_cases, &forest, config)?;
    let c = &cases[fold];
    segment_case(&c.id, &c.ct, &forest, &database, config, jobs)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LoocvMode {
    #[default]
    Pipeline,
    /// Uses each case's ground truth as its prediction.
    OraclePassthrough,
}

#[derive(Clone, Debug, Default)]
pub struct LoocvOptions {
    /// Per-case artifacts and the report go here when set.
    pub run_dir: Option<PathBuf>,
    pub jobs: usize,
    pub mode: LoocvMode,
}

fn write_artifacts(dir: &Path, seg: &Segmentation) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_labels(dir.join("segmentation.mhd"), &seg.labels)?;
    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&seg.summary).map_err(|e| Error::json(&path, e))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn score(case: &LoadedCase, pred: &LabelVolume) -> Result<(f64, f64)> {
    Ok((jaccard(pred, &case.label, 1)?, dice(pred, &case.label, 1)?))
}

fn run_fold(cases: &[LoadedCase], fold: usize, config: &PipelineConfig, opts: &LoocvOptions) -> Result<(f64, f64)> {
    let case = &cases[fold];
    match opts.mode {
        LoocvMode::OraclePassthrough => {
            if let Some(dir) = &opts.run_dir {
                let d = dir.join(&case.id);
                std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
                write_labels(d.join("segmentation.mhd"), &case.label)?;
            }
            score(case, &case.label)
        }
        LoocvMode::Pipeline => {
            let seg = segment_fold(cases, fold, config, opts.jobs)?;
            if let Some(dir) = &opts.run_dir {
                write_artifacts(&dir.join(&case.id), &seg)?;
            }
            score(case, &seg.labels)
        }
    }
}

/// Leave-one-out over `cases`; a failing case is recorded and the run goes on.
pub fn run_loocv_cases(cases: &[LoadedCase], config: &PipelineConfig, opts: &LoocvOptions) -> Result<OverlapReport> {
    if cases.len() < 3 {
        return Err(Error::InvalidConfig(format!("leave-one-out needs at least 3 cases, got {}", cases.len())));
    }
    config.validate()?;
    let mut rows = Vec::with_capacity(cases.len());
    for fold in 0..cases.len() {
        let id = cases[fold].id.clone();
        let row = match run_fold(cases, fold, config, opts) {
            Ok((ji, dc)) => {
                info!("{id}: JI {ji:.2} DICE {dc:.2}");
                CaseResult { id, ji: Some(ji), dice: Some(dc), error: None }
            }
            Err(e) => {
                warn!("{id}: failed: {e}");
                CaseResult { id, ji: None, dice: None, error: Some(e.to_string()) }
            }
        };
        rows.push(row);
    }
    let report = OverlapReport::from_cases(rows);
    if let Some(dir) = &opts.run_dir {
        report.write(dir)?;
    }
    Ok(report)
}

pub fn run_loocv(manifest: &Manifest, config: &PipelineConfig, opts: &LoocvOptions) -> Result<OverlapReport> {
    run_loocv_cases(&load_cases(manifest)?, config, opts)
}

/// Box errors for one held-out case, in mm per face.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationFold {
    pub id: String,
    pub truth: BoundingBox6,
    pub predicted: BoundingBox6,
    /// Mean of the training boxes, face by face.
    pub baseline: BoundingBox6,
}

impl LocalizationFold {
    pub fn errors(&self) -> [f64; 6] {
        std::array::from_fn(|f| (self.predicted.faces[f] - self.truth.faces[f]).abs())
    }

    pub fn baseline_errors(&self) -> [f64; 6] {
        std::array::from_fn(|f| (self.baseline.faces[f] - self.truth.faces[f]).abs())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub folds: Vec<LocalizationFold>,
    /// Mean absolute face error over all folds and faces, mm.
    pub mean_error: f64,
    pub baseline_error: f64,
}

fn mean_face_box(boxes: impl Iterator<Item = BoundingBox6>) -> BoundingBox6 {
    let mut sum = [0.0; 6];
    let mut n = 0.0;
    for b in boxes {
        for f in 0..6 {
            sum[f] += b.faces[f];
        }
        n += 1.0;
    }
    BoundingBox6 { faces: sum.map(|s| s / n) }
}

/// Leave-one-out forest localisation against the mean-box baseline.
pub fn loo_localization(cases: &[LoadedCase], params: &ForestParams) -> Result<LocalizationReport> {
    if cases.len() < 2 {
        return Err(Error::InvalidConfig("localisation needs at least 2 cases".into()));
    }
    let mut folds = Vec::with_capacity(cases.len());
    for (i, c) in cases.iter().enumerate() {
        let forest = train_excluding(cases, Some(i), &fold_forest_params(params, i))?;
        let predicted = estimate_bounding_box(&forest, &c.ct)?;
        let baseline = mean_face_box(cases.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, o)| o.bbox));
        folds.push(LocalizationFold { id: c.id.clone(), truth: c.bbox, predicted, baseline });
    }
    let n = (folds.len() * 6) as f64;
    let mean_error = folds.iter().flat_map(|f| f.errors()).sum::<f64>() / n;
    let baseline_error = folds.iter().flat_map(|f| f.baseline_errors()).sum::<f64>() / n;
    Ok(LocalizationReport { folds, mean_error, baseline_error })
}
