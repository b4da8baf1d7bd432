//! Rough MAP segmentation under the atlas prior, followed by graph-cut
//! refinement and clean-up.

mod em;
mod graph;
mod maxflow;
mod overlay;

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::volume::{LabelVolume, Volume3D};

pub use em::{fit_intensity_model_em, ClassModel, EmParams, Gaussian, IntensityModel};
pub use graph::{
    background_cost, build_graph, energy, max_flow_min_cut, neighbour_cost, pancreas_cost, refine_graph_cut,
    Connectivity, Cut, FlowNetwork, GraphCutParams, EPS,
};
pub use maxflow::FlowGraph;
pub use overlay::{render_overlay, write_overlays};

fn check(ct: &Volume3D, atlas: &Volume3D) -> Result<()> {
    if ct.grid().same_frame(atlas.grid()) {
        Ok(())
    } else {
        Err(Error::FrameMismatch("CT and atlas grids differ".into()))
    }
}

/// Per-voxel posterior argmax; ties go to background.
pub fn map_segment(ct: &Volume3D, atlas: &Volume3D, model: &IntensityModel) -> Result<LabelVolume> {
    check(ct, atlas)?;
    let data = ct
        .data()
        .iter()
        .zip(atlas.data())
        .map(|(&x, &p)| {
            let (sp, sb) = model.log_scores(f64::from(x), f64::from(p).clamp(0.0, 1.0));
            u8::from(sp > sb)
        })
        .collect();
    LabelVolume::from_vec(*ct.grid(), data)
}

/// Per-voxel pancreas posterior under the atlas prior.
pub fn posterior_volume(ct: &Volume3D, atlas: &Volume3D, model: &IntensityModel) -> Result<Volume3D> {
    check(ct, atlas)?;
    let data = ct
        .data()
        .iter()
        .zip(atlas.data())
        .map(|(&x, &p)| model.posterior(f64::from(x), f64::from(p).clamp(0.0, 1.0)) as f32)
        .collect();
    Volume3D::from_vec(*ct.grid(), data)
}

/// Keeps the largest 6-connected component of `label`; everything else
/// becomes 0. Equal sizes keep the component met first in storage order.
pub fn largest_component(v: &LabelVolume, label: u8) -> LabelVolume {
    let d = v.dims();
    let data = v.data();
    let mut comp = vec![u32::MAX; data.len()];
    let mut best = (0usize, u32::MAX);
    let mut queue = VecDeque::new();
    let mut next_id = 0u32;
    for start in 0..data.len() {
        if data[start] != label || comp[start] != u32::MAX {
            continue;
        }
        let id = next_id;
        next_id += 1;
        comp[start] = id;
        queue.push_back(start);
        let mut size = 0usize;
        while let Some(idx) = queue.pop_front() {
            size += 1;
            let (i, j, k) = (idx % d[0], (idx / d[0]) % d[1], idx / (d[0] * d[1]));
            let mut visit = |n: usize| {
                if data[n] == label && comp[n] == u32::MAX {
                    comp[n] = id;
                    queue.push_back(n);
                }
            };
            if i > 0 {
                visit(idx - 1);
            }
            if i + 1 < d[0] {
                visit(idx + 1);
            }
            if j > 0 {
                visit(idx - d[0]);
            }
            if j + 1 < d[1] {
                visit(idx + d[0]);
            }
            if k > 0 {
                visit(idx - d[0] * d[1]);
            }
            if k + 1 < d[2] {
                visit(idx + d[0] * d[1]);
            }
        }
        if size > best.0 {
            best = (size, id);
        }
    }
    let out = data.iter().zip(&comp).map(|(&l, &c)| if l == label && c == best.1 { label } else { 0 }).collect();
    LabelVolume::from_vec(*v.grid(), out).expect("same grid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    #[test]
    fn largest_component_keeps_biggest_blob() {
        let g = Grid::new([8, 3, 1], [1.0; 3], [0.0; 3]).unwrap();
        let v = LabelVolume::from_fn(g, |i, j, _| u8::from((i < 2 && j == 0) || (i > 3 && j > 0)));
        let out = largest_component(&v, 1);
        assert_eq!(out.count(1), 8);
        assert_eq!(out.get(0, 0, 0), 0);
        let empty = LabelVolume::filled(g, 0);
        assert_eq!(largest_component(&empty, 1).count(1), 0);
    }
}
