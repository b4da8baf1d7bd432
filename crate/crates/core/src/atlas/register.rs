//! Multi-resolution block-matching registration on a control-point grid.
//!
//! Displacements are trilinearly interpolated between control points. At
//! each level the moving image is warped by the current field, every control
//! point searches integer shifts of a block around it for the best ZNCC, and
//! the resulting updates are smoothed across the control grid before being
//! added to the field.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Grid, Volume3D};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistrationParams {
    /// Control-point spacing per level, coarsest first, in full-resolution voxels.
    pub control_spacing: Vec<usize>,
    /// Search radius per level, coarsest first, in full-resolution voxels.
    pub search_radius: Vec<usize>,
    /// Block-matching passes per level.
    pub iterations: usize,
    /// Weight of each face neighbour when smoothing control-point updates.
    pub smoothing: f64,
    /// Displacement cap in voxels.
    pub max_displacement: f64,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        RegistrationParams {
            control_spacing: vec![32, 16, 8],
            search_radius: vec![8, 4, 2],
            iterations: 2,
            smoothing: 0.5,
            max_displacement: 24.0,
        }
    }
}

impl RegistrationParams {
    pub fn validate(&self) -> Result<()> {
        let n = self.control_spacing.len();
        let ok = n >= 1
            && n <= 8
            && self.search_radius.len() == n
            && self.control_spacing.iter().all(|&c| c >= 1)
            && self.iterations >= 1
            && self.smoothing >= 0.0
            && self.max_displacement >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("registration parameters out of range: {self:?}")))
        }
    }

    pub fn levels(&self) -> usize {
        self.control_spacing.len()
    }
}

/// Control-point layout of the finest registration level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlGrid {
    /// Spacing between control points, in voxels.
    pub spacing: usize,
    pub dims: [usize; 3],
}

impl ControlGrid {
    fn covering(dims: [usize; 3], spacing: usize) -> Self {
        ControlGrid { spacing, dims: dims.map(|n| (n.saturating_sub(1)).div_ceil(spacing) + 1) }
    }

    fn len(&self) -> usize {
        self.dims.iter().product()
    }

    fn index(&self, c: [usize; 3]) -> usize {
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    /// Trilinear interpolation of control values at voxel position `p`.
    fn interpolate(&self, values: &[[f64; 3]], p: [f64; 3]) -> [f64; 3] {
        let mut lo = [0usize; 3];
        let mut t = [0.0f64; 3];
        for a in 0..3 {
            let u = p[a] / self.spacing as f64;
            if self.dims[a] == 1 {
                continue;
            }
            let i0 = (u.floor().max(0.0) as usize).min(self.dims[a] - 2);
            lo[a] = i0;
            t[a] = (u - i0 as f64).clamp(0.0, 1.0);
        }
        let mut out = [0.0; 3];
        for corner in 0..8usize {
            let mut w = 1.0;
            let mut c = lo;
            for a in 0..3 {
                let up = corner >> a & 1 == 1;
                if up {
                    if self.dims[a] == 1 {
                        w = 0.0;
                        break;
                    }
                    c[a] += 1;
                    w *= t[a];
                } else {
                    w *= 1.0 - t[a];
                }
            }
            if w == 0.0 {
                continue;
            }
            let v = values[self.index(c)];
            for a in 0..3 {
                out[a] += w * v[a];
            }
        }
        out
    }
}

/// Dense displacement field on a VOI grid, in mm. Warping follows
/// `output(x) = input(x + u(x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationField {
    pub grid: Grid,
    pub displacement: Vec<[f32; 3]>,
    pub control: ControlGrid,
}

impl DeformationField {
    pub fn zero(grid: Grid) -> Self {
        DeformationField {
            grid,
            displacement: vec![[0.0; 3]; grid.len()],
            control: ControlGrid { spacing: 1, dims: grid.dims },
        }
    }

    /// Uniform shift of `mm` everywhere.
    pub fn constant(grid: Grid, mm: [f64; 3]) -> Self {
        let d = mm.map(|x| x as f32);
        DeformationField { grid, displacement: vec![d; grid.len()], control: ControlGrid { spacing: 1, dims: grid.dims } }
    }

    /// Displacement at voxel `idx` in voxel units.
    pub fn voxels(&self, idx: usize) -> [f64; 3] {
        let d = self.displacement[idx];
        std::array::from_fn(|a| f64::from(d[a]) / self.grid.spacing[a])
    }

    pub fn max_magnitude_voxels(&self) -> f64 {
        (0..self.displacement.len())
            .map(|i| self.voxels(i).iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn mean_magnitude_voxels(&self) -> f64 {
        let n = self.displacement.len().max(1) as f64;
        (0..self.displacement.len()).map(|i| self.voxels(i).iter().map(|x| x * x).sum::<f64>().sqrt()).sum::<f64>() / n
    }
}

/// Flat image with clamped trilinear sampling.
struct Image {
    dims: [usize; 3],
    data: Vec<f32>,
}

impl Image {
    #[inline]
    fn at(&self, i: i64, j: i64, k: i64) -> f32 {
        let c = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
        let (i, j, k) = (c(i, self.dims[0]), c(j, self.dims[1]), c(k, self.dims[2]));
        self.data[i + self.dims[0] * (j + self.dims[1] * k)]
    }

    fn sample(&self, p: [f64; 3]) -> f32 {
        let f = p.map(|x| x.floor());
        let t: [f64; 3] = std::array::from_fn(|a| p[a] - f[a]);
        let b = f.map(|x| x as i64);
        let mut acc = 0.0f64;
        for corner in 0..8usize {
            let mut w = 1.0;
            let mut q = b;
            for a in 0..3 {
                if corner >> a & 1 == 1 {
                    q[a] += 1;
                    w *= t[a];
                } else {
                    w *= 1.0 - t[a];
                }
            }
            if w != 0.0 {
                acc += w * f64::from(self.at(q[0], q[1], q[2]));
            }
        }
        acc as f32
    }

    /// Block average by `f`; partial blocks at the far edge average what exists.
    fn downsample(&self, f: usize) -> Image {
        if f == 1 {
            return Image { dims: self.dims, data: self.data.clone() };
        }
        let dims = self.dims.map(|n| n.div_ceil(f));
        let mut sum = vec![0.0f64; dims.iter().product()];
        let mut cnt = vec![0u32; sum.len()];
        for k in 0..self.dims[2] {
            for j in 0..self.dims[1] {
                for i in 0..self.dims[0] {
                    let c = i / f + dims[0] * (j / f + dims[1] * (k / f));
                    sum[c] += f64::from(self.data[i + self.dims[0] * (j + self.dims[1] * k)]);
                    cnt[c] += 1;
                }
            }
        }
        Image { dims, data: sum.iter().zip(&cnt).map(|(s, &n)| (s / f64::from(n)) as f32).collect() }
    }
}

struct Level<'a> {
    fixed: &'a Image,
    warped: &'a Image,
    /// Warped voxels whose source lay inside the moving image.
    valid: &'a [bool],
}

impl Level<'_> {
    /// ZNCC between the fixed block `[lo, hi]` and the warped block shifted
    /// by `d`, over pairs whose warped sample is valid.
    fn block_zncc(&self, lo: [i64; 3], hi: [i64; 3], d: [i64; 3]) -> Option<f64> {
        let dims = self.warped.dims;
        let (mut sa, mut saa, mut sb, mut sbb, mut sab, mut n) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0usize);
        for k in lo[2]..=hi[2] {
            let kk = k + d[2];
            if kk < 0 || kk >= dims[2] as i64 {
                continue;
            }
            for j in lo[1]..=hi[1] {
                let jj = j + d[1];
                if jj < 0 || jj >= dims[1] as i64 {
                    continue;
                }
                for i in lo[0]..=hi[0] {
                    let ii = i + d[0];
                    if ii < 0 || ii >= dims[0] as i64 {
                        continue;
                    }
                    let w = ii as usize + dims[0] * (jj as usize + dims[1] * kk as usize);
                    if !self.valid[w] {
                        continue;
                    }
                    let a = f64::from(self.fixed.at(i, j, k));
                    let b = f64::from(self.warped.data[w]);
                    sa += a;
                    saa += a * a;
                    sb += b;
                    sbb += b * b;
                    sab += a * b;
                    n += 1;
                }
            }
        }
        let total = (0..3).map(|a| (hi[a] - lo[a] + 1) as usize).product::<usize>();
        if 2 * n < total {
            return None;
        }
        let nf = n as f64;
        let var_a = saa - sa * sa / nf;
        let var_b = sbb - sb * sb / nf;
        if var_a <= 1e-9 * nf || var_b <= 1e-9 * nf {
            return None;
        }
        Some((sab - sa * sb / nf) / (var_a.sqrt() * var_b.sqrt()))
    }
}

fn cap(v: [f64; 3], limit: f64) -> [f64; 3] {
    let m = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if m > limit {
        let s = limit / m;
        v.map(|x| x * s)
    } else {
        v
    }
}

/// Registers `moving` onto `fixed` (both on the same VOI grid) and returns
/// the field that warps `moving` into the frame of `fixed`.
pub fn register_deformable(moving: &Volume3D, fixed: &Volume3D, params: &RegistrationParams) -> Result<DeformationField> {
    params.validate()?;
    if !moving.grid().same_frame(fixed.grid()) {
        return Err(Error::FrameMismatch("registration inputs must share a grid".into()));
    }
    let grid = *fixed.grid();
    let dims = grid.dims;
    let fixed_full = Image { dims, data: fixed.data().to_vec() };
    let moving_full = Image { dims, data: moving.data().to_vec() };
    let levels = params.levels();

    let mut control = ControlGrid::covering(dims, params.control_spacing[0]);
    let mut disp = vec![[0.0f64; 3]; control.len()];

    for level in 0..levels {
        let f = 1usize << (levels - 1 - level);
        let cs = params.control_spacing[level];
        if level > 0 {
            let next = ControlGrid::covering(dims, cs);
            let mut values = vec![[0.0; 3]; next.len()];
            for (idx, v) in values.iter_mut().enumerate() {
                let c = [idx % next.dims[0], (idx / next.dims[0]) % next.dims[1], idx / (next.dims[0] * next.dims[1])];
                *v = control.interpolate(&disp, c.map(|x| (x * cs) as f64));
            }
            control = next;
            disp = values;
        }
        let fixed_l = fixed_full.downsample(f);
        let moving_l = moving_full.downsample(f);
        let half = (f as f64 - 1.0) / 2.0;
        let radius = (params.search_radius[level] / f) as i64;
        let hb = (cs / f).max(1) as i64;

        for _ in 0..params.iterations {
            // moving resampled through the current field at coarse voxel centres
            let ld = fixed_l.dims;
            let mut warped = vec![0.0f32; fixed_l.data.len()];
            let mut valid = vec![false; warped.len()];
            for k in 0..ld[2] {
                for j in 0..ld[1] {
                    for i in 0..ld[0] {
                        let q = [i, j, k].map(|c| c as f64 * f as f64 + half);
                        let u = control.interpolate(&disp, q);
                        let p: [f64; 3] = std::array::from_fn(|a| (q[a] + u[a] - half) / f as f64);
                        let w = i + ld[0] * (j + ld[1] * k);
                        warped[w] = moving_l.sample(p);
                        valid[w] = (0..3).all(|a| p[a] >= -0.5 && p[a] <= ld[a] as f64 - 0.5);
                    }
                }
            }
            let warped = Image { dims: ld, data: warped };
            let lv = Level { fixed: &fixed_l, warped: &warped, valid: &valid };

            let mut update = vec![[0.0f64; 3]; control.len()];
            let mut confident = vec![false; control.len()];
            for (idx, (upd, conf)) in update.iter_mut().zip(confident.iter_mut()).enumerate() {
                let c = [idx % control.dims[0], (idx / control.dims[0]) % control.dims[1], idx / (control.dims[0] * control.dims[1])];
                let centre: [i64; 3] = std::array::from_fn(|a| {
                    let x = ((c[a] * cs) as f64 - half) / f as f64;
                    (x.round() as i64).clamp(0, ld[a] as i64 - 1)
                });
                let lo: [i64; 3] = std::array::from_fn(|a| (centre[a] - hb).max(0));
                let hi: [i64; 3] = std::array::from_fn(|a| (centre[a] + hb).min(ld[a] as i64 - 1));
                let Some(mut best) = lv.block_zncc(lo, hi, [0; 3]) else { continue };
                let mut best_d = [0i64; 3];
                for dz in -radius..=radius {
                    for dy in -radius..=radius {
                        for dx in -radius..=radius {
                            let d = [dx, dy, dz];
                            if d == [0; 3] {
                                continue;
                            }
                            if let Some(s) = lv.block_zncc(lo, hi, d) {
                                if s > best + 1e-9 {
                                    best = s;
                                    best_d = d;
                                }
                            }
                        }
                    }
                }
                *upd = best_d.map(|x| (x * f as i64) as f64);
                *conf = true;
            }

            let mut changed = false;
            for idx in 0..control.len() {
                let c = [idx % control.dims[0], (idx / control.dims[0]) % control.dims[1], idx / (control.dims[0] * control.dims[1])];
                let mut acc = [0.0f64; 3];
                let mut wsum = 0.0;
                let mut add = |n: usize, w: f64| {
                    if confident[n] {
                        for a in 0..3 {
                            acc[a] += w * update[n][a];
                        }
                        wsum += w;
                    }
                };
                add(idx, 1.0);
                for a in 0..3 {
                    for step in [-1i64, 1] {
                        let x = c[a] as i64 + step;
                        if x >= 0 && (x as usize) < control.dims[a] {
                            let mut nc = c;
                            nc[a] = x as usize;
                            add(control.index(nc), params.smoothing);
                        }
                    }
                }
                if wsum > 0.0 {
                    let before = disp[idx];
                    let next: [f64; 3] = std::array::from_fn(|a| before[a] + acc[a] / wsum);
                    disp[idx] = cap(next, params.max_displacement);
                    changed |= disp[idx] != before;
                }
            }
            if !changed {
                break;
            }
        }
    }

    let mut displacement = Vec::with_capacity(grid.len());
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let u = cap(control.interpolate(&disp, [i as f64, j as f64, k as f64]), params.max_displacement);
                displacement.push(std::array::from_fn(|a| (u[a] * grid.spacing[a]) as f32));
            }
        }
    }
    Ok(DeformationField { grid, displacement, control })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_grid_interpolates_linear_fields_exactly() {
        let cg = ControlGrid::covering([17, 9, 5], 4);
        assert_eq!(cg.dims, [5, 3, 2]);
        let mut v = vec![[0.0; 3]; cg.len()];
        for k in 0..cg.dims[2] {
            for j in 0..cg.dims[1] {
                for i in 0..cg.dims[0] {
                    let p = [i, j, k].map(|x| (x * 4) as f64);
                    v[cg.index([i, j, k])] = [p[0] * 0.5, p[1] - p[2], 2.0];
                }
            }
        }
        let u = cg.interpolate(&v, [5.0, 3.0, 2.0]);
        assert!((u[0] - 2.5).abs() < 1e-12 && (u[1] - 1.0).abs() < 1e-12 && (u[2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn downsample_averages_blocks() {
        let img = Image { dims: [4, 2, 2], data: (0..16).map(|x| x as f32).collect() };
        let d = img.downsample(2);
        assert_eq!(d.dims, [2, 1, 1]);
        assert_eq!(d.data, vec![(0.0 + 1.0 + 4.0 + 5.0 + 8.0 + 9.0 + 12.0 + 13.0) / 8.0, (2.0 + 3.0 + 6.0 + 7.0 + 10.0 + 11.0 + 14.0 + 15.0) / 8.0]);
    }

    #[test]
    fn cap_limits_magnitude() {
        let v = cap([3.0, 4.0, 0.0], 2.5);
        assert!(((v[0] * v[0] + v[1] * v[1]).sqrt() - 2.5).abs() < 1e-12);
        assert_eq!(cap([1.0, 0.0, 0.0], 2.0), [1.0, 0.0, 0.0]);
    }
}
