use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::io::{read_mhd, write_mhd, ElementType};
use crate::volume::{LabelVolume, Volume3D};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtlasEntry {
    pub id: String,
    pub weight: f64,
}

/// Probability of one label per voxel, fused from weighted registered labels.
#[derive(Clone, Debug)]
pub struct ProbAtlas {
    pub prob: Volume3D,
    pub label: u8,
    pub contributors: Vec<AtlasEntry>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    label: u8,
    contributors: Vec<AtlasEntry>,
}

/// Weighted vote `M(x) = sum_i z_i [L_i(x) = label] / sum_i z_i`.
pub fn build_atlas<'a, I>(selected: I, label: u8) -> Result<ProbAtlas>
where
    I: IntoIterator<Item = (&'a str, f64, &'a LabelVolume)>,
{
    let mut acc: Option<(Vec<f64>, LabelVolume)> = None;
    let mut total = 0.0;
    let mut contributors = Vec::new();
    for (id, z, l) in selected {
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::InvalidConfig(format!("atlas weight for {id} must be positive, got {z}")));
        }
        let (sum, first) = acc.get_or_insert_with(|| (vec![0.0; l.data().len()], l.clone()));
        if !l.grid().same_frame(first.grid()) {
            return Err(Error::FrameMismatch(format!("label of {id} is not in the atlas frame")));
        }
        for (s, &v) in sum.iter_mut().zip(l.data()) {
            if v == label {
                *s += z;
            }
        }
        total += z;
        contributors.push(AtlasEntry { id: id.to_string(), weight: z });
    }
    let Some((sum, first)) = acc else {
        return Err(Error::EmptySelection);
    };
    let prob = sum.iter().map(|s| (s / total).clamp(0.0, 1.0) as f32).collect();
    Ok(ProbAtlas { prob: Volume3D::from_vec(*first.grid(), prob)?, label, contributors })
}

impl ProbAtlas {
    /// Writes `path` (float MHD) and a JSON sidecar next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_mhd(path, &self.prob, ElementType::Float)?;
        let side = sidecar_path(path);
        let text = serde_json::to_string_pretty(&Sidecar { label: self.label, contributors: self.contributors.clone() })
            .map_err(|e| Error::json(&side, e))?;
        std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let prob = read_mhd(path)?;
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let s: Sidecar = serde_json::from_str(&text).map_err(|e| Error::json(&side, e))?;
        Ok(ProbAtlas { prob, label: s.label, contributors: s.contributors })
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("atlas.json")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    fn grid() -> Grid {
        Grid::new([2, 2, 1], [1.0; 3], [0.0; 3]).unwrap()
    }

    #[test]
    fn two_voter_example() {
        let a = LabelVolume::from_vec(grid(), vec![1, 0, 0, 0]).unwrap();
        let b = LabelVolume::from_vec(grid(), vec![0, 0, 0, 0]).unwrap();
        let m = build_atlas([("a", 0.8, &a), ("b", 0.2, &b)], 1).unwrap();
        assert!((m.prob.data()[0] - 0.8).abs() < 1e-7);
        assert_eq!(m.prob.data()[1], 0.0);
    }

    #[test]
    fn unanimous_vote_is_binary() {
        let a = LabelVolume::from_vec(grid(), vec![1, 0, 1, 0]).unwrap();
        let m = build_atlas([("a", 0.3, &a), ("b", 0.9, &a), ("c", 0.51, &a)], 1).unwrap();
        assert_eq!(m.prob.data(), &[1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn empty_and_invalid_inputs() {
        assert!(matches!(build_atlas(std::iter::empty(), 1), Err(Error::EmptySelection)));
        let a = LabelVolume::from_vec(grid(), vec![1, 0, 1, 0]).unwrap();
        assert!(build_atlas([("a", 0.0, &a)], 1).is_err());
        let other = LabelVolume::filled(Grid::new([4, 1, 1], [1.0; 3], [0.0; 3]).unwrap(), 0);
        assert!(matches!(build_atlas([("a", 0.5, &a), ("b", 0.5, &other)], 1), Err(Error::FrameMismatch(_))));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = LabelVolume::from_vec(grid(), vec![1, 0, 1, 0]).unwrap();
        let b = LabelVolume::from_vec(grid(), vec![1, 1, 0, 0]).unwrap();
        let m = build_atlas([("a", 0.7, &a), ("b", 0.2, &b)], 1).unwrap();
        let p = dir.path().join("atlas.mhd");
        m.save(&p).unwrap();
        let back = ProbAtlas::load(&p).unwrap();
        assert_eq!(back.prob.data(), m.prob.data());
        assert_eq!(back.contributors, m.contributors);
    }
}
