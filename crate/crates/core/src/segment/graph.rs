use serde::{Deserialize, Serialize};

use super::maxflow::FlowGraph;
use crate::error::{Error, Result};
use crate::volume::{LabelVolume, Volume3D};

/// Clamp used inside the logarithms of the data term.
pub const EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "6")]
    Six,
    #[serde(rename = "26")]
    TwentySix,
}

impl Connectivity {
    /// Forward half of the neighbourhood, so every pair is listed once.
    pub fn forward_offsets(self) -> Vec<[i64; 3]> {
        let mut out = Vec::new();
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let o = [dx, dy, dz];
                    let nonzero = o.iter().filter(|&&v| v != 0).count();
                    let forward = (dz, dy, dx) > (0, 0, 0);
                    let keep = match self {
                        Connectivity::Six => nonzero == 1,
                        Connectivity::TwentySix => nonzero >= 1,
                    };
                    if keep && forward {
                        out.push(o);
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphCutParams {
    /// Smoothness weight `lambda_smooth`.
    pub lambda: f64,
    /// Contrast scale `sigma_edge`, HU.
    pub sigma_edge: f64,
    pub connectivity: Connectivity,
}

impl Default for GraphCutParams {
    fn default() -> Self {
        GraphCutParams { lambda: 1.0, sigma_edge: 30.0, connectivity: Connectivity::Six }
    }
}

impl GraphCutParams {
    pub fn validate(&self) -> Result<()> {
        if self.lambda >= 0.0 && self.sigma_edge > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("graph-cut parameters out of range: {self:?}")))
        }
    }
}

/// Cost of labelling a voxel pancreas, `-ln(p + eps)`, clamped at 0.
#[inline]
pub fn pancreas_cost(p: f64) -> f64 {
    (-(p + EPS).ln()).max(0.0)
}

/// Cost of labelling a voxel background, `-ln(1 - p + eps)`, clamped at 0.
#[inline]
pub fn background_cost(p: f64) -> f64 {
    (-(1.0 - p + EPS).ln()).max(0.0)
}

/// `lambda exp(-(a - b)^2 / (2 sigma^2)) / dist`, with `dist` in voxels.
#[inline]
pub fn neighbour_cost(a: f64, b: f64, dist: f64, params: &GraphCutParams) -> f64 {
    let d = a - b;
    params.lambda * (-(d * d) / (2.0 * params.sigma_edge * params.sigma_edge)).exp() / dist
}

/// Binary segmentation energy graph. Pancreas is the sink side: the source
/// link of a voxel carries its pancreas cost and is cut when the voxel ends
/// on the sink side; the sink link carries its background cost.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowNetwork {
    pub source_cap: Vec<f64>,
    pub sink_cap: Vec<f64>,
    /// `(a, b, cap a->b, cap b->a)`.
    pub edges: Vec<(u32, u32, f64, f64)>,
}

impl FlowNetwork {
    pub fn node_count(&self) -> usize {
        self.source_cap.len()
    }

    /// Cut value when `sink_side[v]` marks the sink-side nodes.
    pub fn cut_value(&self, sink_side: &[bool]) -> f64 {
        let mut c = 0.0;
        for v in 0..self.node_count() {
            c += if sink_side[v] { self.source_cap[v] } else { self.sink_cap[v] };
        }
        for &(a, b, ab, ba) in &self.edges {
            match (sink_side[a as usize], sink_side[b as usize]) {
                (false, true) => c += ab,
                (true, false) => c += ba,
                _ => {}
            }
        }
        c
    }
}

pub fn build_graph(ct: &Volume3D, posterior: &Volume3D, params: &GraphCutParams) -> Result<FlowNetwork> {
    params.validate()?;
    if !ct.grid().same_frame(posterior.grid()) {
        return Err(Error::FrameMismatch("CT and posterior grids differ".into()));
    }
    let p = posterior.data();
    let source_cap = p.iter().map(|&x| pancreas_cost(f64::from(x).clamp(0.0, 1.0))).collect();
    let sink_cap = p.iter().map(|&x| background_cost(f64::from(x).clamp(0.0, 1.0))).collect();
    let d = ct.dims();
    let data = ct.data();
    let offsets = params.connectivity.forward_offsets();
    let mut edges = Vec::with_capacity(offsets.len() * data.len());
    for k in 0..d[2] {
        for j in 0..d[1] {
            for i in 0..d[0] {
                let a = i + d[0] * (j + d[1] * k);
                for o in &offsets {
                    let (x, y, z) = (i as i64 + o[0], j as i64 + o[1], k as i64 + o[2]);
                    if x < 0 || y < 0 || z < 0 || x >= d[0] as i64 || y >= d[1] as i64 || z >= d[2] as i64 {
                        continue;
                    }
                    let b = x as usize + d[0] * (y as usize + d[1] * z as usize);
                    let dist = ((o[0] * o[0] + o[1] * o[1] + o[2] * o[2]) as f64).sqrt();
                    let w = neighbour_cost(f64::from(data[a]), f64::from(data[b]), dist, params);
                    edges.push((a as u32, b as u32, w, w));
                }
            }
        }
    }
    Ok(FlowNetwork { source_cap, sink_cap, edges })
}

/// Max-flow value and the sink-side indicator of a minimum cut. Nodes not
/// connected to the sink in the final residual graph are on the source side.
#[derive(Clone, Debug)]
pub struct Cut {
    pub flow: f64,
    pub sink_side: Vec<bool>,
}

pub fn max_flow_min_cut(net: &FlowNetwork) -> Cut {
    let n = net.node_count();
    let mut g = FlowGraph::with_capacity(n, net.edges.len());
    for v in 0..n {
        g.add_tweights(v, net.source_cap[v], net.sink_cap[v]);
    }
    for &(a, b, ab, ba) in &net.edges {
        g.add_edge(a as usize, b as usize, ab, ba);
    }
    let flow = g.maxflow();
    Cut { flow, sink_side: (0..n).map(|v| g.in_sink_tree(v)).collect() }
}

/// Energy `sum D_v(L_v) + sum_{p~q} w_pq [L_p != L_q]` of a labelling.
pub fn energy(ct: &Volume3D, posterior: &Volume3D, labels: &LabelVolume, params: &GraphCutParams) -> Result<f64> {
    if !labels.grid().same_frame(ct.grid()) {
        return Err(Error::FrameMismatch("labels and CT grids differ".into()));
    }
    let net = build_graph(ct, posterior, params)?;
    let side: Vec<bool> = labels.data().iter().map(|&l| l != 0).collect();
    Ok(net.cut_value(&side))
}

/// Minimum-energy labelling (1 = pancreas).
pub fn refine_graph_cut(ct: &Volume3D, posterior: &Volume3D, params: &GraphCutParams) -> Result<LabelVolume> {
    let net = build_graph(ct, posterior, params)?;
    let cut = max_flow_min_cut(&net);
    LabelVolume::from_vec(*ct.grid(), cut.sink_side.iter().map(|&s| u8::from(s)).collect())
}
