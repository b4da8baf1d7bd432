//! End-to-end segmentation of one CT volume against a labelled database.

use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::atlas::{atlas_from_selection, make_voi, select_similar, AtlasEntry, Voi};
use crate::config::{BoxSource, PipelineConfig};
use crate::dss::dss_volume;
use crate::error::{Error, Result};
use crate::forest::{estimate_bounding_box, RegressionForest};
use crate::segment::{
    energy, fit_intensity_model_em, largest_component, map_segment, posterior_volume, refine_graph_cut,
    IntensityModel,
};
use crate::volume::{BoundingBox6, LabelVolume, Volume3D};

/// A labelled case available to the atlas database.
#[derive(Clone, Copy)]
pub struct DatabaseCase<'a> {
    pub id: &'a str,
    pub ct: &'a Volume3D,
    pub label: &'a LabelVolume,
}

/// Builds a VOI with its DSS volume from a CT, a box and an optional label.
pub fn prepare_voi(
    id: &str,
    ct: &Volume3D,
    bbox: &BoundingBox6,
    label: Option<&LabelVolume>,
    config: &PipelineConfig,
) -> Result<Voi> {
    let mut voi = make_voi(id, ct, bbox, label, &config.voi)?;
    voi.dss = Some(dss_volume(&voi.ct, &config.dss)?);
    Ok(voi)
}

/// VOIs of every database case, boxed as `config.database_boxes` says.
pub fn build_database(cases: &[DatabaseCase], forest: &RegressionForest, config: &PipelineConfig) -> Result<Vec<Voi>> {
    cases
        .iter()
        .map(|c| {
            let bbox = match config.database_boxes {
                BoxSource::Estimated => estimate_bounding_box(forest, c.ct)?,
                BoxSource::GroundTruth => c
                    .label
                    .bounding_box(1)
                    .ok_or_else(|| Error::Stage(format!("database case {} has an empty label", c.id)))?,
            };
            prepare_voi(c.id, c.ct, &bbox, Some(c.label), config)
        })
        .collect()
}

/// Everything the pipeline produced for one case.
#[derive(Clone, Debug)]
pub struct Segmentation {
    /// Final labelling on the input CT grid.
    pub labels: LabelVolume,
    pub bbox: BoundingBox6,
    pub voi: Voi,
    pub atlas: Volume3D,
    pub model: IntensityModel,
    /// MAP labelling in the VOI frame.
    pub map_labels: LabelVolume,
    /// Graph-cut labelling in the VOI frame.
    pub refined: LabelVolume,
    pub summary: CaseSummary,
}

/// Serialisable record of one segmentation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub id: String,
    pub bbox: BoundingBox6,
    pub selected: Vec<AtlasEntry>,
    /// Mean per-voxel log-likelihood after each EM iteration.
    pub em_trace: Vec<f64>,
    pub map_energy: f64,
    pub refined_energy: f64,
}

fn timed<T>(stage: &str, id: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let out = f();
    info!("{id}: {stage} took {:.3} s", t.elapsed().as_secs_f64());
    out
}

/// Localises the box with `forest`, then [`segment_with_box`].
pub fn segment_case(
    id: &str,
    ct: &Volume3D,
    forest: &RegressionForest,
    database: &[Voi],
    config: &PipelineConfig,
    jobs: usize,
) -> Result<Segmentation> {
    let bbox = timed("localisation", id, || estimate_bounding_box(forest, ct))?;
    segment_with_box(id, ct, &bbox, database, config, jobs)
}

/// VOI, atlas selection and fusion, EM/MAP, graph cut, back-projection.
pub fn segment_with_box(
    id: &str,
    ct: &Volume3D,
    bbox: &BoundingBox6,
    database: &[Voi],
    config: &PipelineConfig,
    jobs: usize,
) -> Result<Segmentation> {
    config.validate()?;
    let voi = timed("voi + dss", id, || prepare_voi(id, ct, bbox, None, config))?;
    let selected = timed("atlas selection", id, || {
        select_similar(&voi, database, config.atlas_count, &config.registration, jobs)
    })?;
    let atlas = atlas_from_selection(&selected)?;
    let model = timed("em", id, || fit_intensity_model_em(&voi.ct, &atlas.prob, &config.em))?;
    let map_labels = map_segment(&voi.ct, &atlas.prob, &model)?;
    let posterior = posterior_volume(&voi.ct, &atlas.prob, &model)?;
    let refined = timed("graph cut", id, || refine_graph_cut(&voi.ct, &posterior, &config.graph_cut))?;
    let map_energy = energy(&voi.ct, &posterior, &map_labels, &config.graph_cut)?;
    let refined_energy = energy(&voi.ct, &posterior, &refined, &config.graph_cut)?;
    let mut labels = voi.project_labels(&refined, ct.grid())?;
    if config.largest_component {
        labels = largest_component(&labels, 1);
    }
    let summary = CaseSummary {
        id: id.to_string(),
        bbox: *bbox,
        selected: atlas.contributors.clone(),
        em_trace: model.trace.clone(),
        map_energy,
        refined_energy,
    };
    Ok(Segmentation { labels, bbox: *bbox, voi, atlas: atlas.prob, model, map_labels, refined, summary })
}
