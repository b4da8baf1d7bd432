//! Single JSON configuration covering every pipeline stage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::atlas::{RegistrationParams, VoiParams};
use crate::dss::DssParams;
use crate::error::{Error, Result};
use crate::forest::ForestParams;
use crate::segment::{EmParams, GraphCutParams};

/// Where database VOIs take their boxes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxSource {
    /// Boxes estimated by the same forest used for the input case.
    #[default]
    Estimated,
    /// Ground-truth boxes of the database labels.
    GroundTruth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Forest parameters; `forest.seed` is the root seed of every run.
    pub forest: ForestParams,
    pub voi: VoiParams,
    pub dss: DssParams,
    pub registration: RegistrationParams,
    /// Number of database atlases fused per case (`N_s`).
    pub atlas_count: usize,
    pub em: EmParams,
    pub graph_cut: GraphCutParams,
    pub database_boxes: BoxSource,
    /// Keep only the largest connected component of the final labelling.
    pub largest_component: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            forest: ForestParams::default(),
            voi: VoiParams::default(),
            dss: DssParams::default(),
            registration: RegistrationParams::default(),
            atlas_count: 20,
            em: EmParams::default(),
            graph_cut: GraphCutParams::default(),
            database_boxes: BoxSource::Estimated,
            largest_component: true,
        }
    }
}

impl PipelineConfig {
    /// Scaled-down settings sized for the synthetic phantom suite.
    pub fn phantom() -> Self {
        PipelineConfig {
            forest: ForestParams {
                patch_size: 25,
                patch_stride: 6,
                n_features: 20,
                n_thresholds: 50,
                min_samples: 20,
                max_depth: 10,
                n_trees: 4,
                min_patch_mean: Some(-500.0),
                ..ForestParams::default()
            },
            voi: VoiParams { size: 48, spacing: 2.0, margin: 10.0 },
            dss: DssParams { sigma1: 2.0, scales: 3, ..DssParams::default() },
            registration: RegistrationParams {
                control_spacing: vec![16, 8, 4],
                search_radius: vec![8, 4, 1],
                iterations: 1,
                ..RegistrationParams::default()
            },
            atlas_count: 11,
            ..PipelineConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.forest.validate()?;
        self.voi.validate()?;
        self.dss.validate()?;
        self.registration.validate()?;
        self.em.validate()?;
        self.graph_cut.validate()?;
        if self.atlas_count == 0 {
            return Err(Error::InvalidConfig("atlas_count must be >= 1".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises") + "\n"
    }

    /// Reads and validates a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c = Self::from_json(&text).map_err(|e| Error::json(path, e))?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_hold_published_values() {
        let c = PipelineConfig::default();
        let f = &c.forest;
        assert_eq!((f.patch_size, f.n_features, f.n_thresholds, f.min_samples, f.max_depth), (25, 40, 500, 20, 15));
        assert_eq!((c.voi.size, c.voi.spacing), (256, 1.0));
        assert_eq!(c.atlas_count, 20);
        assert_eq!((c.dss.weight, c.dss.scales, c.dss.tau, c.dss.sigma1), (2.0, 7, 0.25, 1.0));
        c.validate().unwrap();
        PipelineConfig::phantom().validate().unwrap();
    }

    #[test]
    fn json_round_trip_and_unknown_fields() {
        let c = PipelineConfig::phantom();
        assert_eq!(PipelineConfig::from_json(&c.to_json()).unwrap(), c);
        let mut v: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
        v["bogus"] = 1.into();
        assert!(PipelineConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn out_of_range_is_rejected() {
        let mut c = PipelineConfig::default();
        c.dss.tau = 1.5;
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        let mut c = PipelineConfig::default();
        c.atlas_count = 0;
        assert!(c.validate().is_err());
    }
}
