use serde::{Deserialize, Serialize};

use super::Volume3D;
use crate::error::{Error, Result};

/// Axis-aligned voxel box inside a patch: `lo` inclusive, `hi` exclusive,
/// both relative to the patch corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cuboid {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl Cuboid {
    pub fn new(lo: [usize; 3], hi: [usize; 3]) -> Self {
        Cuboid { lo, hi }
    }

    pub fn voxel_count(&self) -> usize {
        (0..3).map(|a| self.hi[a].saturating_sub(self.lo[a])).product()
    }

    pub fn is_valid_in_patch(&self, patch: usize) -> bool {
        (0..3).all(|a| self.lo[a] < self.hi[a] && self.hi[a] <= patch)
    }
}

/// Summed-volume table: `S(i,j,k)` is the sum of the source over
/// `[0,i) x [0,j) x [0,k)`, so every face at index 0 is zero.
#[derive(Clone, Debug)]
pub struct IntegralVolume {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl IntegralVolume {
    /// Source dims (the table is one larger along each axis).
    pub fn source_dims(&self) -> [usize; 3] {
        [self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1]
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[i + self.dims[0] * (j + self.dims[1] * k)]
    }

    /// Sum of source voxels in `[lo, hi)`; absolute voxel indices.
    #[inline]
    pub fn box_sum(&self, lo: [usize; 3], hi: [usize; 3]) -> f64 {
        let [x0, y0, z0] = lo;
        let [x1, y1, z1] = hi;
        self.at(x1, y1, z1) - self.at(x0, y1, z1) - self.at(x1, y0, z1) - self.at(x1, y1, z0)
            + self.at(x0, y0, z1)
            + self.at(x0, y1, z0)
            + self.at(x1, y0, z0)
            - self.at(x0, y0, z0)
    }

    /// Sum over a cuboid placed at `corner`.
    pub fn cuboid_sum(&self, corner: [usize; 3], c: &Cuboid) -> Result<f64> {
        let src = self.source_dims();
        let ok = (0..3).all(|a| c.lo[a] < c.hi[a] && corner[a] + c.hi[a] <= src[a]);
        if !ok {
            return Err(Error::OutOfBounds { corner, lo: c.lo, hi: c.hi, dims: src });
        }
        Ok(self.cuboid_sum_unchecked(corner, c))
    }

    #[inline]
    pub(crate) fn cuboid_sum_unchecked(&self, corner: [usize; 3], c: &Cuboid) -> f64 {
        let lo = [corner[0] + c.lo[0], corner[1] + c.lo[1], corner[2] + c.lo[2]];
        let hi = [corner[0] + c.hi[0], corner[1] + c.hi[1], corner[2] + c.hi[2]];
        self.box_sum(lo, hi)
    }

    #[inline]
    pub(crate) fn cuboid_mean_unchecked(&self, corner: [usize; 3], c: &Cuboid) -> f64 {
        self.cuboid_sum_unchecked(corner, c) / c.voxel_count() as f64
    }
}

pub fn build_integral(v: &Volume3D) -> IntegralVolume {
    let [nx, ny, nz] = v.dims();
    let dims = [nx + 1, ny + 1, nz + 1];
    let (sx, sxy) = (dims[0], dims[0] * dims[1]);
    let mut data = vec![0.0f64; dims[0] * dims[1] * dims[2]];
    let src = v.data();
    for k in 0..nz {
        for j in 0..ny {
            let mut row = 0.0f64;
            for i in 0..nx {
                row += f64::from(src[i + nx * (j + ny * k)]);
                let out = (i + 1) + sx * (j + 1) + sxy * (k + 1);
                // S(i+1,j+1,k+1) = row + S(i+1,j,k+1) + S(i+1,j+1,k) - S(i+1,j,k)
                data[out] = row + data[out - sx] + data[out - sxy] - data[out - sx - sxy];
            }
        }
    }
    IntegralVolume { dims, data }
}

/// Mean of the source over cuboid `c` placed at `patch_corner`.
pub fn cuboid_mean(iv: &IntegralVolume, patch_corner: [usize; 3], c: &Cuboid) -> Result<f64> {
    Ok(iv.cuboid_sum(patch_corner, c)? / c.voxel_count() as f64)
}
