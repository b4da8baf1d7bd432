use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::volume::{LabelVolume, Volume3D};

const WINDOW_LO: f32 = -160.0;
const WINDOW_HI: f32 = 240.0;
const TINT: [f32; 3] = [255.0, 40.0, 40.0];
const ALPHA: f32 = 0.45;

/// Axial slice `k` as grayscale CT (W400/L40) with label voxels tinted red.
/// Image columns follow +x and rows follow +y.
pub fn render_overlay(ct: &Volume3D, labels: &LabelVolume, k: usize) -> Result<RgbImage> {
    if !ct.grid().same_frame(labels.grid()) {
        return Err(Error::FrameMismatch("CT and label grids differ".into()));
    }
    let d = ct.dims();
    if k >= d[2] {
        return Err(Error::InvalidGeometry(format!("slice {k} outside {} slices", d[2])));
    }
    Ok(RgbImage::from_fn(d[0] as u32, d[1] as u32, |x, y| {
        let (i, j) = (x as usize, y as usize);
        let g = ((ct.get(i, j, k) - WINDOW_LO) / (WINDOW_HI - WINDOW_LO)).clamp(0.0, 1.0) * 255.0;
        let px = if labels.get(i, j, k) != 0 { TINT.map(|t| (1.0 - ALPHA) * g + ALPHA * t) } else { [g; 3] };
        Rgb(px.map(|c| c.round() as u8))
    }))
}

/// Writes `<prefix>_zNNN.png` for every slice containing a label voxel (the
/// middle slice if none do). Returns the written paths.
pub fn write_overlays(ct: &Volume3D, labels: &LabelVolume, dir: impl AsRef<Path>, prefix: &str) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let d = labels.dims();
    let plane = d[0] * d[1];
    let mut slices: Vec<usize> = (0..d[2]).filter(|&k| labels.data()[k * plane..(k + 1) * plane].iter().any(|&l| l != 0)).collect();
    if slices.is_empty() {
        slices.push(d[2] / 2);
    }
    let mut out = Vec::with_capacity(slices.len());
    for k in slices {
        let path = dir.join(format!("{prefix}_z{k:03}.png"));
        render_overlay(ct, labels, k)?.save(&path)?;
        out.push(path);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    #[test]
    fn tint_and_window() {
        let g = Grid::new([2, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        let ct = Volume3D::from_vec(g, vec![-1000.0, 1000.0]).unwrap();
        let l = LabelVolume::from_vec(g, vec![1, 0]).unwrap();
        let img = render_overlay(&ct, &l, 0).unwrap();
        assert_eq!(img.get_pixel(1, 0).0, [255, 255, 255]);
        let p = img.get_pixel(0, 0).0;
        assert!(p[0] > p[1] && p[1] == p[2]);
    }

    #[test]
    fn writes_labelled_slices() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new([4, 4, 5], [1.0; 3], [0.0; 3]).unwrap();
        let ct = Volume3D::filled(g, 40.0);
        let l = LabelVolume::from_fn(g, |_, _, k| u8::from(k == 1 || k == 3));
        let paths = write_overlays(&ct, &l, dir.path(), "case").unwrap();
        assert_eq!(paths.len(), 2);
        assert!(paths[1].ends_with("case_z003.png") && paths[1].exists());
    }
}
