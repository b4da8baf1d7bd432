use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::resample::{resample_labels_to_grid, sample_nearest};
use crate::volume::{
    resample_to_grid, BoundingBox6, Grid, Interpolation, LabelVolume, Volume3D, FILL_CT,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoiParams {
    /// Edge length `B_v` of the normalised VOI, in voxels.
    pub size: usize,
    /// Nominal voxel size `B_s` of the normalised VOI, in mm.
    pub spacing: f64,
    /// Margin added to every box face, in mm.
    pub margin: f64,
}

impl Default for VoiParams {
    fn default() -> Self {
        VoiParams { size: 256, spacing: 1.0, margin: 20.0 }
    }
}

impl VoiParams {
    pub fn validate(&self) -> Result<()> {
        if self.size < 2 || !(self.spacing > 0.0) || !(self.margin >= 0.0) {
            return Err(Error::InvalidConfig(format!("voi parameters out of range: {self:?}")));
        }
        Ok(())
    }

    /// Grid of the normalised frame shared by every VOI.
    pub fn frame(&self) -> Grid {
        Grid { dims: [self.size; 3], spacing: [self.spacing; 3], origin: [0.0; 3] }
    }
}

/// Cropped, margin-expanded, size-normalised volume of interest.
#[derive(Clone, Debug)]
pub struct Voi {
    pub id: String,
    pub ct: Volume3D,
    pub label: Option<LabelVolume>,
    pub dss: Option<Volume3D>,
    /// Physical region (margin included) the VOI was sampled from.
    pub region: BoundingBox6,
}

impl Voi {
    pub fn frame(&self) -> &Grid {
        self.ct.grid()
    }

    /// Physical grid the VOI voxels were sampled on.
    pub fn sampling_grid(&self) -> Grid {
        sampling_grid(&self.region, self.ct.dims()[0])
    }

    /// Maps a VOI-frame labelling back onto `target` by nearest neighbour;
    /// voxels outside the VOI region are background.
    pub fn project_labels(&self, labels: &LabelVolume, target: &Grid) -> Result<LabelVolume> {
        if !labels.grid().same_frame(self.frame()) {
            return Err(Error::FrameMismatch("labels are not in this VOI's frame".into()));
        }
        let src = self.sampling_grid();
        let physical = labels.clone().with_grid(src)?;
        Ok(LabelVolume::from_fn(*target, |i, j, k| {
            sample_nearest(&physical, src.continuous_index(target.position(i, j, k)), 0)
        }))
    }
}

fn sampling_grid(region: &BoundingBox6, size: usize) -> Grid {
    let ext = region.extent();
    let step: [f64; 3] = std::array::from_fn(|a| ext[a] / size as f64);
    let lo = region.min();
    Grid { dims: [size; 3], spacing: step, origin: std::array::from_fn(|a| lo[a] + 0.5 * step[a]) }
}

/// Expands `bbox` by the margin, crops and resamples the CT (trilinear) and
/// the optional label (nearest) onto a `B_v^3` grid, then relabels that grid
/// with the nominal spacing `B_s`.
pub fn make_voi(
    id: impl Into<String>,
    v: &Volume3D,
    bbox: &BoundingBox6,
    label: Option<&LabelVolume>,
    params: &VoiParams,
) -> Result<Voi> {
    params.validate()?;
    let region = bbox.expanded(params.margin);
    if !region.is_valid() || region.extent().iter().any(|&e| !(e > 0.0)) || !region.intersects(&v.grid().support()) {
        return Err(Error::EmptyIntersection);
    }
    let grid = sampling_grid(&region, params.size);
    let frame = params.frame();
    let ct = resample_to_grid(v, grid, Interpolation::Trilinear, FILL_CT).with_grid(frame)?;
    let label = match label {
        Some(l) => {
            if !l.grid().same_frame(v.grid()) {
                return Err(Error::FrameMismatch("label and CT grids differ".into()));
            }
            Some(resample_labels_to_grid(l, grid, 0).with_grid(frame)?)
        }
        None => None,
    };
    Ok(Voi { id: id.into(), ct, label, dss: None, region })
}
