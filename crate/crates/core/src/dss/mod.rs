//! Direction-specific line enhancement.
//!
//! A multi-scale bright-line filter is evaluated at scales `sigma_k = k *
//! sigma_1`, each response normalised by `sigma_k^2`, and the maximum over
//! scales is kept. Where the principal direction `e1` (eigenvector of the
//! largest Hessian eigenvalue, which runs along a tube) is close to
//! perpendicular to the head-to-foot axis, `|e1 . uz| <= tau`, the maximum is
//! multiplied by `w`. This emphasises horizontal vessels.

mod eigen;
mod hessian;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume3D;

pub use eigen::{eig3_sym, Eig3};
pub use hessian::{gaussian_hessian, HessianField};

/// Constants of the bright-line measure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineMeasure {
    pub gamma23: f64,
    pub gamma12: f64,
    pub alpha: f64,
}

impl Default for LineMeasure {
    fn default() -> Self {
        LineMeasure { gamma23: 1.0, gamma12: 0.5, alpha: 0.25 }
    }
}

/// Bright-line response for eigenvalues sorted `l1 >= l2 >= l3`.
///
/// With `l2, l3 < 0` (bright cross-section):
/// `|l3| (l2/l3)^g23 (1 + l1/|l2|)^g12` when `l1 <= 0`, and
/// `|l3| (l2/l3)^g23 (1 - alpha l1/|l2|)^g12` when `0 < l1 < |l2|/alpha`.
/// Everything else responds 0. Blobs (`l1 ~ l2 ~ l3 < 0`) are suppressed
/// by the `(1 + l1/|l2|)` factor.
pub fn lambda123(eigs: &Eig3, c: &LineMeasure) -> f64 {
    let [l1, l2, l3] = eigs.values;
    if !(l2 < 0.0 && l3 <= l2) {
        return 0.0;
    }
    let cross = l3.abs() * (l2 / l3).powf(c.gamma23);
    let along = if l1 <= 0.0 {
        1.0 + l1 / l2.abs()
    } else if l1 < l2.abs() / c.alpha {
        1.0 - c.alpha * l1 / l2.abs()
    } else {
        return 0.0;
    };
    cross * along.max(0.0).powf(c.gamma12)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DssParams {
    /// Base scale `sigma_1` in mm.
    pub sigma1: f64,
    /// Number of scales `m`.
    pub scales: usize,
    /// Weight `w` for near-horizontal structures.
    pub weight: f64,
    /// Threshold `tau` on `|e1 . uz|`.
    pub tau: f64,
    pub measure: LineMeasure,
}

impl Default for DssParams {
    fn default() -> Self {
        DssParams { sigma1: 1.0, scales: 7, weight: 2.0, tau: 0.25, measure: LineMeasure::default() }
    }
}

impl DssParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma1 > 0.0
            && self.scales >= 1
            && self.weight >= 1.0
            && (0.0..=1.0).contains(&self.tau)
            && self.measure.alpha > 0.0
            && self.measure.gamma12 >= 0.0
            && self.measure.gamma23 >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("dss parameters out of range: {self:?}")))
        }
    }

    pub fn sigma(&self, k: usize) -> f64 {
        k as f64 * self.sigma1
    }
}

/// Per-voxel detail behind a DSS volume.
#[derive(Clone, Debug)]
pub struct DssResponse {
    /// Final weighted response.
    pub dss: Volume3D,
    /// `max_k sigma_k^2 lambda123` before weighting.
    pub unweighted: Vec<f32>,
    /// Scale index `k` (1-based) achieving the max; 0 where nothing responds.
    pub best_scale: Vec<u8>,
    /// `|e1 . uz|` at the best scale.
    pub direction: Vec<f32>,
}

pub fn dss_volume(v: &Volume3D, params: &DssParams) -> Result<Volume3D> {
    Ok(dss_response(v, params)?.dss)
}

pub fn dss_response(v: &Volume3D, params: &DssParams) -> Result<DssResponse> {
    params.validate()?;
    let n = v.data().len();
    let mut best = vec![0.0f64; n];
    let mut best_scale = vec![0u8; n];
    let mut direction = vec![0.0f32; n];
    for k in 1..=params.scales {
        let sigma = params.sigma(k);
        let h = gaussian_hessian(v, sigma);
        let norm = sigma * sigma;
        for idx in 0..n {
            let e = eig3_sym(h.matrix(idx));
            let r = norm * lambda123(&e, &params.measure);
            if r > best[idx] {
                best[idx] = r;
                best_scale[idx] = k as u8;
                // uz is +z, so e1 . uz is the z component of e1
                direction[idx] = e.vectors[0][2].abs() as f32;
            }
        }
    }
    let mut out = Vec::with_capacity(n);
    for idx in 0..n {
        let w = if best_scale[idx] > 0 && f64::from(direction[idx]) <= params.tau { params.weight } else { 1.0 };
        out.push((w * best[idx]) as f32);
    }
    Ok(DssResponse {
        dss: Volume3D::from_vec(*v.grid(), out)?,
        unweighted: best.into_iter().map(|x| x as f32).collect(),
        best_scale,
        direction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    fn eig(values: [f64; 3]) -> Eig3 {
        Eig3 { values, vectors: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] }
    }

    #[test]
    fn flat_eigenvalues_do_not_respond() {
        assert_eq!(lambda123(&eig([0.0, 0.0, 0.0]), &LineMeasure::default()), 0.0);
    }

    #[test]
    fn bright_tube_responds() {
        let r = lambda123(&eig([0.0, -10.0, -10.0]), &LineMeasure::default());
        assert_eq!(r, 10.0);
    }

    #[test]
    fn blob_is_below_tube() {
        let m = LineMeasure::default();
        let blob = lambda123(&eig([-10.0, -10.0, -10.0]), &m);
        let tube = lambda123(&eig([0.0, -10.0, -10.0]), &m);
        assert!(blob < tube);
        assert_eq!(blob, 0.0);
    }

    #[test]
    fn dark_and_sheet_structures_do_not_respond() {
        let m = LineMeasure::default();
        assert_eq!(lambda123(&eig([10.0, 10.0, 0.0]), &m), 0.0);
        assert_eq!(lambda123(&eig([0.0, 0.0, -10.0]), &m), 0.0);
        // l1 positive but beyond |l2| / alpha
        assert_eq!(lambda123(&eig([50.0, -10.0, -10.0]), &m), 0.0);
        let partial = lambda123(&eig([2.0, -10.0, -10.0]), &m);
        assert!(partial > 0.0 && partial < 10.0);
    }

    #[test]
    fn constant_volume_gives_zero_dss() {
        let g = Grid::new([10, 10, 10], [1.0; 3], [0.0; 3]).unwrap();
        let v = Volume3D::filled(g, -100.0);
        let p = DssParams { scales: 3, ..DssParams::default() };
        let d = dss_volume(&v, &p).unwrap();
        assert!(d.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn invalid_params_rejected() {
        let g = Grid::new([4, 4, 4], [1.0; 3], [0.0; 3]).unwrap();
        let v = Volume3D::filled(g, 0.0);
        for p in [
            DssParams { sigma1: 0.0, ..DssParams::default() },
            DssParams { scales: 0, ..DssParams::default() },
            DssParams { weight: 0.5, ..DssParams::default() },
            DssParams { tau: 1.5, ..DssParams::default() },
        ] {
            assert!(dss_volume(&v, &p).is_err());
        }
    }
}
