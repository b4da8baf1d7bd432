use crate::volume::{Grid, Volume3D};

/// Kernels extend to 4 sigma on each side.
const TRUNCATION: f64 = 4.0;

/// Second-derivative components at one scale, in HU/mm^2, stored per voxel
/// in the order `xx, yy, zz, xy, xz, yz`.
#[derive(Clone, Debug)]
pub struct HessianField {
    pub grid: Grid,
    pub sigma: f64,
    pub components: [Vec<f32>; 6],
}

impl HessianField {
    pub const XX: usize = 0;
    pub const YY: usize = 1;
    pub const ZZ: usize = 2;
    pub const XY: usize = 3;
    pub const XZ: usize = 4;
    pub const YZ: usize = 5;

    #[inline]
    pub fn matrix(&self, idx: usize) -> [[f64; 3]; 3] {
        let c = |n: usize| f64::from(self.components[n][idx]);
        let (xx, yy, zz, xy, xz, yz) = (c(0), c(1), c(2), c(3), c(4), c(5));
        [[xx, xy, xz], [xy, yy, yz], [xz, yz, zz]]
    }
}

/// Correlation kernels `(smooth, d/dx, d2/dx2)` for a Gaussian of `sigma` mm
/// sampled every `spacing` mm. The derivative kernels are rescaled so they
/// are exact on linear and quadratic signals respectively.
pub(crate) fn gaussian_kernels(sigma: f64, spacing: f64) -> [Vec<f64>; 3] {
    let radius = ((TRUNCATION * sigma / spacing).ceil() as i64).max(1);
    let xs: Vec<f64> = (-radius..=radius).map(|i| i as f64 * spacing).collect();
    let g: Vec<f64> = xs.iter().map(|x| (-x * x / (2.0 * sigma * sigma)).exp()).collect();

    let total: f64 = g.iter().sum();
    let k0: Vec<f64> = g.iter().map(|v| v / total).collect();

    // correlation form: sum_t k1[t] f(x + x_t) approximates f'(x)
    let mut k1: Vec<f64> = xs.iter().zip(&g).map(|(x, v)| x * v).collect();
    let m1: f64 = k1.iter().zip(&xs).map(|(k, x)| k * x).sum();
    k1.iter_mut().for_each(|k| *k /= m1);

    let mut k2: Vec<f64> = xs.iter().zip(&g).map(|(x, v)| (x * x / (sigma * sigma) - 1.0) * v).collect();
    let mean = k2.iter().sum::<f64>() / k2.len() as f64;
    k2.iter_mut().for_each(|k| *k -= mean);
    let m2: f64 = k2.iter().zip(&xs).map(|(k, x)| k * x * x / 2.0).sum();
    k2.iter_mut().for_each(|k| *k /= m2);

    [k0, k1, k2]
}

/// 1D correlation along `axis` with edge replication.
fn correlate_axis(src: &[f32], dims: [usize; 3], axis: usize, kernel: &[f64]) -> Vec<f32> {
    let n = dims[axis];
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let r = (kernel.len() / 2) as i64;
    let mut out = vec![0.0f32; src.len()];
    let mut line = vec![0.0f64; n];
    let lines = src.len() / n;
    for l in 0..lines {
        let base = match axis {
            0 => l * dims[0],
            1 => (l % dims[0]) + (l / dims[0]) * dims[0] * dims[1],
            _ => l,
        };
        for (t, slot) in line.iter_mut().enumerate() {
            *slot = f64::from(src[base + t * stride]);
        }
        for t in 0..n {
            let mut acc = 0.0;
            let start = t as i64 - r;
            if start >= 0 && start + kernel.len() as i64 <= n as i64 {
                let s = start as usize;
                for (k, w) in kernel.iter().enumerate() {
                    acc += w * line[s + k];
                }
            } else {
                for (k, w) in kernel.iter().enumerate() {
                    let p = (start + k as i64).clamp(0, n as i64 - 1) as usize;
                    acc += w * line[p];
                }
            }
            out[base + t * stride] = acc as f32;
        }
    }
    out
}

/// Hessian of the Gaussian-smoothed volume at scale `sigma` (mm). Each axis
/// uses kernels sampled at that axis's spacing, so anisotropic grids are
/// handled in physical units. Borders replicate the edge voxel.
pub fn gaussian_hessian(v: &Volume3D, sigma: f64) -> HessianField {
    assert!(sigma > 0.0, "sigma must be positive");
    let dims = v.dims();
    let sp = v.spacing();
    let kx = gaussian_kernels(sigma, sp[0]);
    let ky = gaussian_kernels(sigma, sp[1]);
    let kz = gaussian_kernels(sigma, sp[2]);
    // derivatives ignore a constant offset; removing it keeps f32 round-off small
    let mean = v.data().iter().map(|&x| f64::from(x)).sum::<f64>() / v.data().len() as f64;
    let centred: Vec<f32> = v.data().iter().map(|&x| (f64::from(x) - mean) as f32).collect();
    let src = &centred[..];

    let z0 = correlate_axis(src, dims, 2, &kz[0]);
    let z1 = correlate_axis(src, dims, 2, &kz[1]);
    let z2 = correlate_axis(src, dims, 2, &kz[2]);

    let y0z0 = correlate_axis(&z0, dims, 1, &ky[0]);
    let y1z0 = correlate_axis(&z0, dims, 1, &ky[1]);
    let y2z0 = correlate_axis(&z0, dims, 1, &ky[2]);
    let y0z1 = correlate_axis(&z1, dims, 1, &ky[0]);
    let y1z1 = correlate_axis(&z1, dims, 1, &ky[1]);
    let y0z2 = correlate_axis(&z2, dims, 1, &ky[0]);
    drop((z0, z1, z2));

    let xx = correlate_axis(&y0z0, dims, 0, &kx[2]);
    let yy = correlate_axis(&y2z0, dims, 0, &kx[0]);
    let zz = correlate_axis(&y0z2, dims, 0, &kx[0]);
    let xy = correlate_axis(&y1z0, dims, 0, &kx[1]);
    let xz = correlate_axis(&y0z1, dims, 0, &kx[1]);
    let yz = correlate_axis(&y1z1, dims, 0, &kx[0]);

    HessianField { grid: *v.grid(), sigma, components: [xx, yy, zz, xy, xz, yz] }
}
