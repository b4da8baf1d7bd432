use serde::{Deserialize, Serialize};

use super::{BoundingBox6, Grid, Volume};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

/// Slack for treating a sample on a voxel boundary as inside the support.
const EDGE_EPS: f64 = 1e-9;

#[inline]
fn axis_weights(u: f64, n: usize) -> Option<(usize, usize, f64)> {
    if u < -0.5 - EDGE_EPS || u > n as f64 - 0.5 + EDGE_EPS {
        return None;
    }
    if n == 1 {
        return Some((0, 0, 0.0));
    }
    let u = u.clamp(0.0, (n - 1) as f64);
    let i0 = (u.floor() as usize).min(n - 2);
    Some((i0, i0 + 1, u - i0 as f64))
}

/// Trilinear sample at continuous index `u`. The support of voxel `i` is
/// `[i - 0.5, i + 0.5]`; inside the outer half-voxel the edge value is held.
#[inline]
pub(crate) fn sample_trilinear<T: Copy + Into<f64>>(v: &Volume<T>, u: [f64; 3], fill: f64) -> f64 {
    let d = v.dims();
    let (Some((x0, x1, tx)), Some((y0, y1, ty)), Some((z0, z1, tz))) =
        (axis_weights(u[0], d[0]), axis_weights(u[1], d[1]), axis_weights(u[2], d[2]))
    else {
        return fill;
    };
    let data = v.data();
    let at = |i: usize, j: usize, k: usize| -> f64 { data[i + d[0] * (j + d[1] * k)].into() };
    let c00 = at(x0, y0, z0) * (1.0 - tx) + at(x1, y0, z0) * tx;
    let c10 = at(x0, y1, z0) * (1.0 - tx) + at(x1, y1, z0) * tx;
    let c01 = at(x0, y0, z1) * (1.0 - tx) + at(x1, y0, z1) * tx;
    let c11 = at(x0, y1, z1) * (1.0 - tx) + at(x1, y1, z1) * tx;
    let c0 = c00 * (1.0 - ty) + c10 * ty;
    let c1 = c01 * (1.0 - ty) + c11 * ty;
    c0 * (1.0 - tz) + c1 * tz
}

#[inline]
pub(crate) fn sample_nearest<T: Copy>(v: &Volume<T>, u: [f64; 3], fill: T) -> T {
    let d = v.dims();
    let mut idx = [0usize; 3];
    for a in 0..3 {
        if u[a] < -0.5 - EDGE_EPS || u[a] > d[a] as f64 - 0.5 + EDGE_EPS {
            return fill;
        }
        idx[a] = (u[a].round().max(0.0) as usize).min(d[a] - 1);
    }
    v.get(idx[0], idx[1], idx[2])
}

/// Samples `v` at every voxel centre of `target`.
pub fn resample_to_grid(v: &Volume<f32>, target: Grid, interp: Interpolation, fill: f32) -> Volume<f32> {
    let src = *v.grid();
    Volume::from_fn(target, |i, j, k| {
        let u = src.continuous_index(target.position(i, j, k));
        match interp {
            Interpolation::Trilinear => sample_trilinear(v, u, f64::from(fill)) as f32,
            Interpolation::Nearest => sample_nearest(v, u, fill),
        }
    })
}

/// Nearest-neighbour resampling for label volumes.
pub(crate) fn resample_labels_to_grid(v: &Volume<u8>, target: Grid, fill: u8) -> Volume<u8> {
    let src = *v.grid();
    Volume::from_fn(target, |i, j, k| sample_nearest(v, src.continuous_index(target.position(i, j, k)), fill))
}

/// Resamples onto a grid with new dims and spacing that shares the input's
/// lower field-of-view corner.
pub fn resample_trilinear(
    v: &Volume<f32>,
    new_dims: [usize; 3],
    new_spacing: [f64; 3],
    fill: f32,
) -> Result<Volume<f32>> {
    let g = v.grid();
    let mut origin = [0.0; 3];
    for a in 0..3 {
        origin[a] = g.origin[a] - 0.5 * g.spacing[a] + 0.5 * new_spacing[a];
    }
    let target = Grid::new(new_dims, new_spacing, origin)?;
    if target.dims == g.dims && target.spacing == g.spacing {
        return Ok(v.clone().with_grid(target)?);
    }
    Ok(resample_to_grid(v, target, Interpolation::Trilinear, fill))
}

/// Index range of voxels whose cells overlap `[lo, hi]` (physical), on one axis.
fn overlap_range(g: &Grid, a: usize, lo: f64, hi: f64) -> (i64, i64) {
    let ulo = (lo - g.origin[a]) / g.spacing[a];
    let uhi = (hi - g.origin[a]) / g.spacing[a];
    let first = (ulo - 0.5 + EDGE_EPS).floor() as i64 + 1;
    let last = (uhi + 0.5 - EDGE_EPS).ceil() as i64 - 1;
    (first, last.max(first))
}

/// Physical-space crop. The output covers the box rounded outward to voxel
/// boundaries of the input grid; parts beyond the input are set to `fill`.
pub fn crop<T: Copy>(v: &Volume<T>, bbox: &BoundingBox6, fill: T) -> Result<Volume<T>> {
    if !bbox.is_valid() || !bbox.intersects(&v.grid().support()) {
        return Err(Error::EmptyIntersection);
    }
    let g = *v.grid();
    let (lo, hi) = (bbox.min(), bbox.max());
    let mut start = [0i64; 3];
    let mut dims = [0usize; 3];
    let mut origin = [0.0; 3];
    for a in 0..3 {
        let (first, last) = overlap_range(&g, a, lo[a], hi[a]);
        start[a] = first;
        dims[a] = (last - first + 1) as usize;
        origin[a] = g.origin[a] + first as f64 * g.spacing[a];
    }
    let out = Grid::new(dims, g.spacing, origin)?;
    Ok(Volume::from_fn(out, |i, j, k| {
        let src = [start[0] + i as i64, start[1] + j as i64, start[2] + k as i64];
        if (0..3).all(|a| src[a] >= 0 && (src[a] as usize) < g.dims[a]) {
            v.get(src[0] as usize, src[1] as usize, src[2] as usize)
        } else {
            fill
        }
    }))
}
