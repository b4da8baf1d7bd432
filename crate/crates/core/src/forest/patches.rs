use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BoundingBox6, Cuboid, IntegralVolume, Volume3D};

/// A `p x p x p` patch position: the voxel corner and the physical centre.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Patch {
    pub corner: [usize; 3],
    pub center: [f64; 3],
}

impl Patch {
    /// Centre repeated per face: `(vx, vx, vy, vy, vz, vz)`.
    #[inline]
    pub fn center6(&self) -> [f64; 6] {
        let c = self.center;
        [c[0], c[0], c[1], c[1], c[2], c[2]]
    }
}

/// Training patch with its offsets to every box face, `d = b - v_hat`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchSample {
    pub patch: Patch,
    pub offsets: [f64; 6],
    /// Index of the source volume in the training set.
    pub volume: usize,
}

impl PatchSample {
    pub fn new(patch: Patch, bbox: &BoundingBox6, volume: usize) -> Self {
        let c = patch.center6();
        let mut offsets = [0.0; 6];
        for f in 0..6 {
            offsets[f] = bbox.faces[f] - c[f];
        }
        PatchSample { patch, offsets, volume }
    }

    /// `d + v_hat`.
    pub fn reconstruct_box(&self) -> [f64; 6] {
        let c = self.patch.center6();
        std::array::from_fn(|f| self.offsets[f] + c[f])
    }
}

/// Number of patch positions along one axis of length `n`.
#[inline]
pub fn patches_along(n: usize, p: usize, stride: usize) -> usize {
    if n < p {
        0
    } else {
        (n - p) / stride + 1
    }
}

/// Patches on a regular grid with a `stride` (voxels) between corners,
/// starting at the volume corner. Every patch lies fully inside the volume.
pub fn extract_patches(v: &Volume3D, stride: usize, p: usize) -> Result<Vec<Patch>> {
    let dims = v.dims();
    if p == 0 || stride == 0 {
        return Err(Error::InvalidConfig("patch size and stride must be >= 1".into()));
    }
    if dims.iter().any(|&n| n < p) {
        return Err(Error::VolumeSmallerThanPatch { dims, patch: p });
    }
    let counts: [usize; 3] = std::array::from_fn(|a| patches_along(dims[a], p, stride));
    let g = v.grid();
    let half = (p as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(counts.iter().product());
    for pk in 0..counts[2] {
        for pj in 0..counts[1] {
            for pi in 0..counts[0] {
                let corner = [pi * stride, pj * stride, pk * stride];
                let center = std::array::from_fn(|a| g.origin[a] + (corner[a] as f64 + half) * g.spacing[a]);
                out.push(Patch { corner, center });
            }
        }
    }
    Ok(out)
}

/// Pair of cuboids inside a patch; the feature value is the difference of
/// their mean intensities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CuboidFeature {
    pub first: Cuboid,
    pub second: Cuboid,
}

impl CuboidFeature {
    pub fn is_valid_in_patch(&self, p: usize) -> bool {
        self.first.is_valid_in_patch(p) && self.second.is_valid_in_patch(p)
    }

    /// Callers guarantee both cuboids fit at `corner`.
    #[inline]
    pub(crate) fn eval_unchecked(&self, iv: &IntegralVolume, corner: [usize; 3]) -> f64 {
        iv.cuboid_mean_unchecked(corner, &self.first) - iv.cuboid_mean_unchecked(corner, &self.second)
    }
}

/// `mean(F1) - mean(F2)` for the patch whose corner is `patch_corner`.
pub fn eval_feature(iv: &IntegralVolume, patch_corner: [usize; 3], feat: &CuboidFeature) -> Result<f64> {
    let a = iv.cuboid_sum(patch_corner, &feat.first)? / feat.first.voxel_count() as f64;
    let b = iv.cuboid_sum(patch_corner, &feat.second)? / feat.second.voxel_count() as f64;
    Ok(a - b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{build_integral, Grid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vol(dims: [usize; 3]) -> Volume3D {
        Volume3D::filled(Grid::new(dims, [1.0, 1.0, 1.0], [0.0; 3]).unwrap(), 0.0)
    }

    #[test]
    fn exact_fit_gives_one_patch() {
        let p = extract_patches(&vol([25, 25, 25]), 25, 25).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].corner, [0, 0, 0]);
        assert_eq!(p[0].center, [12.0, 12.0, 12.0]);
    }

    #[test]
    fn tiling_count() {
        assert_eq!(extract_patches(&vol([50, 50, 50]), 25, 25).unwrap().len(), 8);
    }

    #[test]
    fn too_small_volume_errors() {
        assert!(matches!(
            extract_patches(&vol([24, 30, 30]), 5, 25),
            Err(Error::VolumeSmallerThanPatch { .. })
        ));
    }

    #[test]
    fn random_grids_match_counting_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let p = rng.random_range(1..8);
            let stride = rng.random_range(1..9);
            let dims = [rng.random_range(p..20), rng.random_range(p..20), rng.random_range(p..20)];
            let g = Grid::new(dims, [0.7, 1.1, 2.0], [1.0, 2.0, 3.0]).unwrap();
            let patches = extract_patches(&Volume3D::filled(g, 0.0), stride, p).unwrap();
            // counting oracle: enumerate every admissible corner on the stride lattice
            let mut want = 1;
            for n in dims {
                want *= (0..n).step_by(stride).filter(|&c| c + p <= n).count();
            }
            assert_eq!(patches.len(), want);
            for patch in &patches {
                for a in 0..3 {
                    assert!(patch.corner[a] + p <= dims[a]);
                    let expect = g.origin[a] + (patch.corner[a] as f64 + (p as f64 - 1.0) / 2.0) * g.spacing[a];
                    assert!((patch.center[a] - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn offsets_reconstruct_box() {
        let b = BoundingBox6 { faces: [-3.0, 40.0, 2.5, 19.0, 100.0, 130.25] };
        let patch = Patch { corner: [0, 0, 0], center: [7.25, -1.0, 88.0] };
        let s = PatchSample::new(patch, &b, 0);
        assert_eq!(s.reconstruct_box(), b.faces);
    }

    fn naive_mean(v: &Volume3D, corner: [usize; 3], c: &Cuboid) -> f64 {
        let mut s = 0.0;
        let mut n = 0.0;
        for k in c.lo[2]..c.hi[2] {
            for j in c.lo[1]..c.hi[1] {
                for i in c.lo[0]..c.hi[0] {
                    s += f64::from(v.get(corner[0] + i, corner[1] + j, corner[2] + k));
                    n += 1.0;
                }
            }
        }
        s / n
    }

    fn random_cuboid(rng: &mut impl Rng, p: usize) -> Cuboid {
        let lo: [usize; 3] = std::array::from_fn(|_| rng.random_range(0..p));
        let hi = std::array::from_fn(|a| rng.random_range(lo[a] + 1..=p));
        Cuboid::new(lo, hi)
    }

    #[test]
    fn identical_cuboids_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = Grid::new([10, 10, 10], [1.0; 3], [0.0; 3]).unwrap();
        let v = Volume3D::from_fn(g, |_, _, _| rng.random_range(-100.0..100.0));
        let iv = build_integral(&v);
        let c = random_cuboid(&mut rng, 5);
        let f = CuboidFeature { first: c, second: c };
        assert_eq!(eval_feature(&iv, [2, 3, 1], &f).unwrap(), 0.0);
    }

    #[test]
    fn constant_volume_gives_zero() {
        let g = Grid::new([10, 10, 10], [1.0; 3], [0.0; 3]).unwrap();
        let iv = build_integral(&Volume3D::filled(g, -100.0));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let f = CuboidFeature { first: random_cuboid(&mut rng, 6), second: random_cuboid(&mut rng, 6) };
            assert_eq!(eval_feature(&iv, [4, 4, 4], &f).unwrap(), 0.0);
        }
    }

    #[test]
    fn feature_matches_naive_mean_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let g = Grid::new([12, 11, 10], [1.0; 3], [0.0; 3]).unwrap();
        let v = Volume3D::from_fn(g, |_, _, _| rng.random_range(-1000.0..1000.0));
        let iv = build_integral(&v);
        for _ in 0..200 {
            let p = 6;
            let corner = [rng.random_range(0..=12 - p), rng.random_range(0..=11 - p), rng.random_range(0..=10 - p)];
            let f = CuboidFeature { first: random_cuboid(&mut rng, p), second: random_cuboid(&mut rng, p) };
            let want = naive_mean(&v, corner, &f.first) - naive_mean(&v, corner, &f.second);
            let got = eval_feature(&iv, corner, &f).unwrap();
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn out_of_bounds_feature_errors() {
        let g = Grid::new([6, 6, 6], [1.0; 3], [0.0; 3]).unwrap();
        let iv = build_integral(&Volume3D::filled(g, 1.0));
        let f = CuboidFeature { first: Cuboid::new([0; 3], [4; 3]), second: Cuboid::new([0; 3], [1; 3]) };
        assert!(eval_feature(&iv, [3, 0, 0], &f).is_err());
    }
}
