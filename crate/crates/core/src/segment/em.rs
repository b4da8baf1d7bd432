use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume3D;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub weight: f64,
    pub mean: f64,
    pub var: f64,
}

impl Gaussian {
    #[inline]
    fn log_density(&self, x: f64) -> f64 {
        let d = x - self.mean;
        -0.5 * (LN_2PI + self.var.ln() + d * d / self.var)
    }
}

/// Gaussian mixture over intensities for one class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassModel {
    pub components: Vec<Gaussian>,
}

impl ClassModel {
    /// `ln sum_j pi_j N(x; mu_j, var_j)`.
    pub fn log_likelihood(&self, x: f64) -> f64 {
        log_sum_exp(self.components.iter().map(|g| g.weight.ln() + g.log_density(x)))
    }
}

/// Pancreas and background intensity mixtures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityModel {
    pub pancreas: ClassModel,
    pub background: ClassModel,
    /// Mean per-voxel log-likelihood after each EM iteration, starting with
    /// the initial model.
    pub trace: Vec<f64>,
}

impl IntensityModel {
    /// Unnormalised log posteriors `(ln P_pan + ln GMM_pan, ln P_bg + ln GMM_bg)`.
    #[inline]
    pub fn log_scores(&self, x: f64, prior: f64) -> (f64, f64) {
        (prior.ln() + self.pancreas.log_likelihood(x), (1.0 - prior).ln() + self.background.log_likelihood(x))
    }

    /// Posterior probability of pancreas.
    pub fn posterior(&self, x: f64, prior: f64) -> f64 {
        let (p, b) = self.log_scores(x, prior);
        if p == f64::NEG_INFINITY {
            return 0.0;
        }
        if b == f64::NEG_INFINITY {
            return 1.0;
        }
        1.0 / (1.0 + (b - p).exp())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmParams {
    pub pancreas_components: usize,
    pub background_components: usize,
    pub max_iterations: usize,
    /// Stop once the mean per-voxel log-likelihood improves by less than this.
    pub tolerance: f64,
    /// Lower bound on every component variance, HU^2.
    pub variance_floor: f64,
}

impl Default for EmParams {
    fn default() -> Self {
        EmParams { pancreas_components: 1, background_components: 2, max_iterations: 100, tolerance: 1e-6, variance_floor: 1.0 }
    }
}

impl EmParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.pancreas_components >= 1
            && self.background_components >= 1
            && self.max_iterations >= 1
            && self.tolerance >= 0.0
            && self.variance_floor > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("em parameters out of range: {self:?}")))
        }
    }
}

fn log_sum_exp(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + it.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Components placed at weighted quantiles of the class intensities.
fn initial_class(xs: &[f64], ws: &[f64], k: usize, floor: f64) -> ClassModel {
    let total: f64 = ws.iter().sum();
    let mean = xs.iter().zip(ws).map(|(x, w)| x * w).sum::<f64>() / total;
    let var = (xs.iter().zip(ws).map(|(x, w)| w * (x - mean).powi(2)).sum::<f64>() / total).max(floor);
    if k == 1 {
        return ClassModel { components: vec![Gaussian { weight: 1.0, mean, var }] };
    }
    let mut order: Vec<usize> = (0..xs.len()).filter(|&i| ws[i] > 0.0).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(a.cmp(&b)));
    let mut components = Vec::with_capacity(k);
    let mut acc = 0.0;
    let mut pos = 0;
    for j in 0..k {
        let target = total * (j as f64 + 0.5) / k as f64;
        while pos + 1 < order.len() && acc + ws[order[pos]] < target {
            acc += ws[order[pos]];
            pos += 1;
        }
        components.push(Gaussian { weight: 1.0 / k as f64, mean: xs[order[pos]], var: (var / k as f64).max(floor) });
    }
    ClassModel { components }
}

/// EM over the joint (class, component) mixture with per-voxel class priors
/// fixed to the atlas: `P_pan(x) = atlas(x)`, `P_bg(x) = 1 - atlas(x)`.
pub fn fit_intensity_model_em(ct: &Volume3D, atlas: &Volume3D, params: &EmParams) -> Result<IntensityModel> {
    params.validate()?;
    if !ct.grid().same_frame(atlas.grid()) {
        return Err(Error::FrameMismatch("CT and atlas grids differ".into()));
    }
    let xs: Vec<f64> = ct.data().iter().map(|&v| f64::from(v)).collect();
    let prior: Vec<f64> = atlas.data().iter().map(|&p| f64::from(p).clamp(0.0, 1.0)).collect();
    let wp: Vec<f64> = prior.clone();
    let wb: Vec<f64> = prior.iter().map(|p| 1.0 - p).collect();
    if wp.iter().sum::<f64>() <= 0.0 {
        return Err(Error::DegenerateAtlas("pancreas"));
    }
    if wb.iter().sum::<f64>() <= 0.0 {
        return Err(Error::DegenerateAtlas("background"));
    }
    let mut model = IntensityModel {
        pancreas: initial_class(&xs, &wp, params.pancreas_components, params.variance_floor),
        background: initial_class(&xs, &wb, params.background_components, params.variance_floor),
        trace: Vec::new(),
    };
    let kp = params.pancreas_components;
    let k = kp + params.background_components;
    let n = xs.len() as f64;
    let mut resp = vec![0.0f64; k];
    let mut logs = vec![0.0f64; k];

    for iter in 0..=params.max_iterations {
        // E step and log-likelihood of the current model
        let mut sr = vec![0.0f64; k];
        let mut sx = vec![0.0f64; k];
        let mut sxx = vec![0.0f64; k];
        let mut ll = 0.0;
        let comps: Vec<(bool, Gaussian)> = model
            .pancreas
            .components
            .iter()
            .map(|g| (true, *g))
            .chain(model.background.components.iter().map(|g| (false, *g)))
            .collect();
        for (i, &x) in xs.iter().enumerate() {
            let lp = prior[i].ln();
            let lb = (1.0 - prior[i]).ln();
            for (j, (c, g)) in comps.iter().enumerate() {
                logs[j] = if *c { lp } else { lb } + g.weight.ln() + g.log_density(x);
            }
            let lse = log_sum_exp(logs.iter().copied());
            ll += lse;
            for j in 0..k {
                resp[j] = (logs[j] - lse).exp();
                sr[j] += resp[j];
                sx[j] += resp[j] * x;
                sxx[j] += resp[j] * x * x;
            }
        }
        let ll = ll / n;
        if let Some(&prev) = model.trace.last() {
            // EM never decreases the likelihood; allow for summation round-off
            assert!(ll >= prev - 1e-9 * prev.abs().max(1.0), "EM log-likelihood decreased: {prev} -> {ll}");
        }
        let improvement = model.trace.last().map(|&p| ll - p);
        model.trace.push(ll);
        if iter == params.max_iterations || improvement.is_some_and(|d| d < params.tolerance) {
            break;
        }

        // M step
        let update = |class: &mut ClassModel, range: std::ops::Range<usize>| {
            let total: f64 = sr[range.clone()].iter().sum();
            for (g, j) in class.components.iter_mut().zip(range) {
                if sr[j] <= 0.0 || total <= 0.0 {
                    continue;
                }
                let mean = sx[j] / sr[j];
                g.weight = sr[j] / total;
                g.mean = mean;
                g.var = (sxx[j] / sr[j] - mean * mean).max(params.variance_floor);
            }
            // components that lost all mass keep a tiny weight so logs stay finite
            let floor_w = 1e-12;
            let mut s = 0.0;
            for g in &mut class.components {
                g.weight = g.weight.max(floor_w);
                s += g.weight;
            }
            for g in &mut class.components {
                g.weight /= s;
            }
        };
        update(&mut model.pancreas, 0..kp);
        update(&mut model.background, kp..k);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_handles_infinities() {
        assert_eq!(log_sum_exp([f64::NEG_INFINITY, f64::NEG_INFINITY].into_iter()), f64::NEG_INFINITY);
        assert!((log_sum_exp([0.0f64, 0.0].into_iter()) - 2f64.ln()).abs() < 1e-15);
        assert!((log_sum_exp([-1000.0f64, f64::NEG_INFINITY].into_iter()) + 1000.0).abs() < 1e-12);
    }

    #[test]
    fn quantile_initialisation_spreads_components() {
        let xs: Vec<f64> = (0..100).map(f64::from).collect();
        let ws = vec![1.0; 100];
        let m = initial_class(&xs, &ws, 2, 1.0);
        assert!(m.components[0].mean < 30.0 && m.components[1].mean > 70.0);
    }
}
