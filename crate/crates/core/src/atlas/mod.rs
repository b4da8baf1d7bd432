//! Volumes of interest, registration, similarity ranking and atlas fusion.

mod fusion;
mod register;
mod voi;

use crate::error::{Error, Result};
use crate::volume::resample::{sample_nearest, sample_trilinear};
use crate::volume::{Interpolation, LabelVolume, Volume, Volume3D};

pub use fusion::{build_atlas, AtlasEntry, ProbAtlas};
pub use register::{register_deformable, ControlGrid, DeformationField, RegistrationParams};
pub use voi::{make_voi, Voi, VoiParams};

fn check_field<T: Copy>(field: &DeformationField, v: &Volume<T>) -> Result<()> {
    if field.grid.same_frame(v.grid()) {
        Ok(())
    } else {
        Err(Error::FrameMismatch("deformation field and volume grids differ".into()))
    }
}

fn source_index(field: &DeformationField, idx: usize) -> [f64; 3] {
    let c = field.grid.coords(idx);
    let u = field.voxels(idx);
    std::array::from_fn(|a| c[a] as f64 + u[a])
}

/// `output(x) = v(x + u(x))`; samples beyond the support take `fill`.
pub fn warp(field: &DeformationField, v: &Volume3D, interp: Interpolation, fill: f32) -> Result<Volume3D> {
    check_field(field, v)?;
    let data = (0..v.data().len())
        .map(|idx| {
            let u = source_index(field, idx);
            match interp {
                Interpolation::Trilinear => sample_trilinear(v, u, f64::from(fill)) as f32,
                Interpolation::Nearest => sample_nearest(v, u, fill),
            }
        })
        .collect();
    Volume3D::from_vec(*v.grid(), data)
}

/// Nearest-neighbour warp of a label volume; outside samples are background.
pub fn warp_labels(field: &DeformationField, v: &LabelVolume) -> Result<LabelVolume> {
    check_field(field, v)?;
    let data = (0..v.data().len()).map(|idx| sample_nearest(v, source_index(field, idx), 0)).collect();
    LabelVolume::from_vec(*v.grid(), data)
}

/// Zero-mean normalised cross-correlation over all voxels, or over the
/// non-zero voxels of `mask`.
pub fn zncc(a: &Volume3D, b: &Volume3D, mask: Option<&LabelVolume>) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::FrameMismatch(format!("zncc inputs {:?} and {:?}", a.dims(), b.dims())));
    }
    if let Some(m) = mask {
        if m.dims() != a.dims() {
            return Err(Error::FrameMismatch("zncc mask dims differ".into()));
        }
    }
    let keep = |i: usize| mask.is_none_or(|m| m.data()[i] != 0);
    let (mut sa, mut sb, mut n) = (0.0f64, 0.0f64, 0usize);
    for (i, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
        if keep(i) {
            sa += f64::from(x);
            sb += f64::from(y);
            n += 1;
        }
    }
    if n < 2 {
        return Err(Error::UndefinedSimilarity);
    }
    let (ma, mb) = (sa / n as f64, sb / n as f64);
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (i, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
        if keep(i) {
            let (dx, dy) = (f64::from(x) - ma, f64::from(y) - mb);
            ab += dx * dy;
            aa += dx * dx;
            bb += dy * dy;
        }
    }
    if aa <= 0.0 || bb <= 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

/// Indices of the `n` highest positive scores, descending, ties by index.
/// Non-finite and non-positive scores are dropped.
pub fn rank_by_similarity(scores: &[f64], n: usize) -> Result<Vec<(usize, f64)>> {
    let mut ranked: Vec<(usize, f64)> = scores.iter().copied().enumerate().filter(|(_, z)| z.is_finite() && *z > 0.0).collect();
    ranked.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    ranked.truncate(n);
    if ranked.is_empty() {
        return Err(Error::EmptySelection);
    }
    Ok(ranked)
}

/// A database VOI registered into the input frame.
#[derive(Clone, Debug)]
pub struct Selected {
    pub index: usize,
    pub id: String,
    pub weight: f64,
    pub label: LabelVolume,
}

/// Similarity of one database VOI after registration onto the input.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub index: usize,
    /// ZNCC of the warped DSS against the input DSS; `None` if undefined.
    pub score: Option<f64>,
    pub field: DeformationField,
}

/// Registers `db` onto `input` (CT to CT) and scores each by DSS ZNCC.
/// Runs up to `jobs` candidates at once; results are ordered by index.
pub fn score_candidates(input: &Voi, db: &[Voi], reg: &RegistrationParams, jobs: usize) -> Result<Vec<Candidate>> {
    let input_dss = input.dss.as_ref().ok_or_else(|| Error::Stage(format!("input VOI {} has no DSS volume", input.id)))?;
    let one = |index: usize| -> Result<Candidate> {
        let d = &db[index];
        let dss = d.dss.as_ref().ok_or_else(|| Error::Stage(format!("database VOI {} has no DSS volume", d.id)))?;
        let field = register_deformable(&d.ct, &input.ct, reg)?;
        let warped = warp(&field, dss, Interpolation::Trilinear, 0.0)?;
        let score = match zncc(&warped, input_dss, None) {
            Ok(z) => Some(z),
            Err(Error::UndefinedSimilarity) => None,
            Err(e) => return Err(e),
        };
        Ok(Candidate { index, score, field })
    };
    let jobs = jobs.max(1).min(db.len().max(1));
    if jobs == 1 {
        return (0..db.len()).map(one).collect();
    }
    let mut out: Vec<Option<Result<Candidate>>> = (0..db.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|t| {
                let one = &one;
                s.spawn(move || (t..db.len()).step_by(jobs).map(|i| (i, one(i))).collect::<Vec<_>>())
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("registration worker panicked") {
                out[i] = Some(r);
            }
        }
    });
    out.into_iter().map(|r| r.expect("every candidate scored")).collect()
}

/// Registers every database VOI onto `input`, ranks them by DSS ZNCC and
/// returns the top `n_s` with their labels warped into the input frame.
pub fn select_similar(input: &Voi, db: &[Voi], n_s: usize, reg: &RegistrationParams, jobs: usize) -> Result<Vec<Selected>> {
    if db.is_empty() {
        return Err(Error::EmptySelection);
    }
    let candidates = score_candidates(input, db, reg, jobs)?;
    let scores: Vec<f64> = candidates.iter().map(|c| c.score.unwrap_or(f64::NAN)).collect();
    rank_by_similarity(&scores, n_s)?
        .into_iter()
        .map(|(index, weight)| {
            let d = &db[index];
            let label = d.label.as_ref().ok_or_else(|| Error::Stage(format!("database VOI {} has no label", d.id)))?;
            Ok(Selected { index, id: d.id.clone(), weight, label: warp_labels(&candidates[index].field, label)? })
        })
        .collect()
}

/// Atlas from a selection, for pancreas label 1.
pub fn atlas_from_selection(selected: &[Selected]) -> Result<ProbAtlas> {
    build_atlas(selected.iter().map(|s| (s.id.as_str(), s.weight, &s.label)), 1)
}
