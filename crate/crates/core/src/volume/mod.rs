//! Dense voxel volumes and their geometry.
//!
//! Data is stored x-fastest: the linear index of voxel `(i, j, k)` is
//! `i + nx * (j + ny * k)`. The physical position of a voxel centre is
//! `origin + (i * sx, j * sy, k * sz)` in millimetres, and voxel `(i, j, k)`
//! covers the cell `[i - 0.5, i + 0.5)` (in index units) around that centre.
//!
//! Axis convention, fixed for the whole crate:
//!
//! | axis | increases toward | min face | max face |
//! |------|------------------|----------|----------|
//! | x    | patient left     | right    | left     |
//! | y    | posterior        | anterior | posterior|
//! | z    | foot             | head     | foot     |
//!
//! so the head-to-foot unit vector is `+z`.

mod integral;
pub mod io;
pub(crate) mod resample;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use integral::{build_integral, cuboid_mean, Cuboid, IntegralVolume};
pub use resample::{crop, resample_to_grid, resample_trilinear, Interpolation};

/// Fill for CT intensities sampled outside the volume support (air).
pub const FILL_CT: f32 = -1024.0;
/// Fill for probability, filter-response and label volumes.
pub const FILL_ZERO: f32 = 0.0;

/// Shape, spacing and placement of a voxel grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidGeometry(format!("dims {dims:?} must all be >= 1")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidGeometry(format!("spacing {spacing:?} must be positive")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGeometry(format!("origin {origin:?} must be finite")));
        }
        Ok(Grid { dims, spacing, origin })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        ]
    }

    /// Continuous index coordinates of a physical point.
    #[inline]
    pub fn continuous_index(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.origin[0]) / self.spacing[0],
            (p[1] - self.origin[1]) / self.spacing[1],
            (p[2] - self.origin[2]) / self.spacing[2],
        ]
    }

    /// Physical extent of the grid, measured between outer voxel boundaries.
    pub fn support(&self) -> BoundingBox6 {
        let mut min = [0.0; 3];
        let mut max = [0.0; 3];
        for a in 0..3 {
            min[a] = self.origin[a] - 0.5 * self.spacing[a];
            max[a] = self.origin[a] + (self.dims[a] as f64 - 0.5) * self.spacing[a];
        }
        BoundingBox6::from_min_max(min, max)
    }

    pub fn same_frame(&self, other: &Grid) -> bool {
        const TOL: f64 = 1e-9;
        self.dims == other.dims
            && (0..3).all(|a| {
                (self.spacing[a] - other.spacing[a]).abs() <= TOL
                    && (self.origin[a] - other.origin[a]).abs() <= TOL
            })
    }
}

/// A scalar volume on a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    grid: Grid,
    data: Vec<T>,
}

/// CT intensities, filter responses or probabilities.
pub type Volume3D = Volume<f32>;
/// Integer labels; `0` is background and `1` the organ.
pub type LabelVolume = Volume<u8>;

impl<T: Copy> Volume<T> {
    pub fn from_vec(grid: Grid, data: Vec<T>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::ElementCountMismatch { expected: grid.len(), found: data.len() });
        }
        Ok(Volume { grid, data })
    }

    pub fn filled(grid: Grid, value: T) -> Self {
        Volume { data: vec![value; grid.len()], grid }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for k in 0..grid.dims[2] {
            for j in 0..grid.dims[1] {
                for i in 0..grid.dims[0] {
                    data.push(f(i, j, k));
                }
            }
        }
        Volume { grid, data }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    #[inline]
    pub fn spacing(&self) -> [f64; 3] {
        self.grid.spacing
    }

    #[inline]
    pub fn origin(&self) -> [f64; 3] {
        self.grid.origin
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.grid.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: T) {
        let idx = self.grid.index(i, j, k);
        self.data[idx] = value;
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Volume<U> {
        Volume { grid: self.grid, data: self.data.iter().copied().map(f).collect() }
    }

    /// Same data, relabelled grid geometry (dims must agree).
    pub fn with_grid(mut self, grid: Grid) -> Result<Self> {
        if grid.dims != self.grid.dims {
            return Err(Error::FrameMismatch(format!(
                "cannot relabel {:?} as {:?}",
                self.grid.dims, grid.dims
            )));
        }
        self.grid = grid;
        Ok(self)
    }
}

impl LabelVolume {
    pub fn count(&self, label: u8) -> usize {
        self.data.iter().filter(|&&l| l == label).count()
    }

    /// Minimal axis-aligned box of all voxels carrying `label`, measured
    /// between outer voxel boundaries. `None` when the label is absent.
    pub fn bounding_box(&self, label: u8) -> Option<BoundingBox6> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for (idx, &l) in self.data.iter().enumerate() {
            if l == label {
                any = true;
                let c = self.grid.coords(idx);
                for a in 0..3 {
                    lo[a] = lo[a].min(c[a]);
                    hi[a] = hi[a].max(c[a]);
                }
            }
        }
        if !any {
            return None;
        }
        let g = &self.grid;
        let mut min = [0.0; 3];
        let mut max = [0.0; 3];
        for a in 0..3 {
            min[a] = g.origin[a] + (lo[a] as f64 - 0.5) * g.spacing[a];
            max[a] = g.origin[a] + (hi[a] as f64 + 0.5) * g.spacing[a];
        }
        Some(BoundingBox6::from_min_max(min, max))
    }
}

/// Which face of a [`BoundingBox6`]. The discriminant is the face's slot in
/// [`BoundingBox6::faces`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    /// Right face (`x` minimum).
    XMin = 0,
    /// Left face (`x` maximum).
    XMax = 1,
    /// Anterior face (`y` minimum).
    YMin = 2,
    /// Posterior face (`y` maximum).
    YMax = 3,
    /// Head face (`z` minimum).
    ZMin = 4,
    /// Foot face (`z` maximum).
    ZMax = 5,
}

impl Face {
    pub const ALL: [Face; 6] = [Face::XMin, Face::XMax, Face::YMin, Face::YMax, Face::ZMin, Face::ZMax];

    /// Spatial axis the face is perpendicular to.
    #[inline]
    pub fn axis(self) -> usize {
        self as usize / 2
    }

    pub fn from_index(i: usize) -> Option<Face> {
        Face::ALL.get(i).copied()
    }
}

/// Axis-aligned box in physical millimetres, stored as
/// `[x_min, x_max, y_min, y_max, z_min, z_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox6 {
    pub faces: [f64; 6],
}

impl BoundingBox6 {
    pub fn from_min_max(min: [f64; 3], max: [f64; 3]) -> Self {
        BoundingBox6 { faces: [min[0], max[0], min[1], max[1], min[2], max[2]] }
    }

    /// Builds a box from raw face estimates, swapping any axis whose min face
    /// came out above its max face.
    pub fn from_faces_repaired(mut faces: [f64; 6]) -> Self {
        for a in 0..3 {
            if faces[2 * a] > faces[2 * a + 1] {
                faces.swap(2 * a, 2 * a + 1);
            }
        }
        BoundingBox6 { faces }
    }

    #[inline]
    pub fn face(&self, f: Face) -> f64 {
        self.faces[f as usize]
    }

    #[inline]
    pub fn min(&self) -> [f64; 3] {
        [self.faces[0], self.faces[2], self.faces[4]]
    }

    #[inline]
    pub fn max(&self) -> [f64; 3] {
        [self.faces[1], self.faces[3], self.faces[5]]
    }

    pub fn extent(&self) -> [f64; 3] {
        let (lo, hi) = (self.min(), self.max());
        [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]]
    }

    pub fn center(&self) -> [f64; 3] {
        let (lo, hi) = (self.min(), self.max());
        [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])]
    }

    pub fn expanded(&self, margin: f64) -> Self {
        let mut faces = self.faces;
        for a in 0..3 {
            faces[2 * a] -= margin;
            faces[2 * a + 1] += margin;
        }
        BoundingBox6 { faces }
    }

    pub fn intersects(&self, other: &BoundingBox6) -> bool {
        (0..3).all(|a| {
            self.faces[2 * a] < other.faces[2 * a + 1] && other.faces[2 * a] < self.faces[2 * a + 1]
        })
    }

    pub fn is_valid(&self) -> bool {
        self.faces.iter().all(|f| f.is_finite()) && (0..3).all(|a| self.faces[2 * a] <= self.faces[2 * a + 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_bad_geometry() {
        assert!(Grid::new([0, 1, 1], [1.0; 3], [0.0; 3]).is_err());
        assert!(Grid::new([1, 1, 1], [1.0, 0.0, 1.0], [0.0; 3]).is_err());
        assert!(Grid::new([1, 1, 1], [1.0, -1.0, 1.0], [0.0; 3]).is_err());
    }

    #[test]
    fn index_round_trip() {
        let g = Grid::new([3, 4, 5], [1.0; 3], [0.0; 3]).unwrap();
        for idx in 0..g.len() {
            let [i, j, k] = g.coords(idx);
            assert_eq!(g.index(i, j, k), idx);
        }
        assert_eq!(g.index(1, 0, 0), 1);
        assert_eq!(g.index(0, 1, 0), 3);
        assert_eq!(g.index(0, 0, 1), 12);
    }

    #[test]
    fn position_uses_origin_and_spacing() {
        let g = Grid::new([4, 4, 4], [0.8, 0.8, 0.4], [10.0, -5.0, 2.0]).unwrap();
        let p = g.position(2, 1, 3);
        for (got, want) in p.iter().zip([11.6, -4.2, 3.2]) {
            assert!((got - want).abs() < 1e-12);
        }
        let back = g.continuous_index(p);
        for (got, want) in back.iter().zip([2.0, 1.0, 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn face_repair_swaps_inverted_axes() {
        let b = BoundingBox6::from_faces_repaired([5.0, 1.0, 0.0, 2.0, 9.0, -3.0]);
        assert_eq!(b.faces, [1.0, 5.0, 0.0, 2.0, -3.0, 9.0]);
    }

    #[test]
    fn label_bounding_box_is_voxel_boundary_aligned() {
        let g = Grid::new([5, 5, 5], [2.0, 2.0, 2.0], [0.0; 3]).unwrap();
        let mut l = LabelVolume::filled(g, 0);
        l.set(1, 2, 3, 1);
        l.set(2, 2, 3, 1);
        let b = l.bounding_box(1).unwrap();
        assert_eq!(b.faces, [1.0, 5.0, 3.0, 5.0, 5.0, 7.0]);
        assert!(l.bounding_box(7).is_none());
    }
}
