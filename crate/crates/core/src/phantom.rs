//! Synthetic abdominal CT phantoms with a known organ mask.
//!
//! A phantom is an elliptic body cylinder (air outside, a soft-tissue wall,
//! fat inside), a set of straight tubes (spine, vertical vessels and a
//! horizontal vein running along the organ's anterior side), and an
//! ellipsoidal organ painted last. Gaussian noise is added on top.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::volume::io::{write_labels, write_mhd, ElementType};
use crate::volume::{BoundingBox6, Grid, LabelVolume, Volume3D};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Body {
    /// Centre of the body cross-section in the x-y plane, mm.
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
    pub wall_thickness: f64,
    pub wall_hu: f64,
    pub outside_hu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    /// A point on the centre line, mm.
    pub point: [f64; 3],
    /// Unit direction of the centre line.
    pub direction: [f64; 3],
    pub radius: f64,
    pub hu: f64,
    /// Half-length measured from `point`; `None` runs through the volume.
    pub half_length: Option<f64>,
}

impl Tube {
    fn contains(&self, p: [f64; 3]) -> bool {
        let d: [f64; 3] = std::array::from_fn(|a| p[a] - self.point[a]);
        let t: f64 = (0..3).map(|a| d[a] * self.direction[a]).sum();
        if self.half_length.is_some_and(|h| t.abs() > h) {
            return false;
        }
        let r2: f64 = (0..3).map(|a| (d[a] - t * self.direction[a]).powi(2)).sum();
        r2 <= self.radius * self.radius
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Organ {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    pub hu: f64,
}

impl Organ {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).map(|a| ((p[a] - self.center[a]) / self.semi_axes[a]).powi(2)).sum::<f64>() <= 1.0
    }

    pub fn analytic_volume(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * self.semi_axes.iter().product::<f64>()
    }
}

/// Complete geometry of one phantom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub background_hu: f64,
    pub body: Option<Body>,
    pub tubes: Vec<Tube>,
    pub organ: Organ,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// A generated phantom with its exact ground truth.
#[derive(Clone, Debug)]
pub struct Phantom {
    pub ct: Volume3D,
    pub label: LabelVolume,
    pub bbox: BoundingBox6,
}

pub fn gen_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    let grid = Grid::new(spec.dims, spec.spacing, [0.0; 3])?;
    if spec.organ.semi_axes.iter().any(|&s| !(s > 0.0)) || !(spec.noise_sigma >= 0.0) {
        return Err(Error::InvalidConfig("organ semi-axes must be positive and noise non-negative".into()));
    }
    let support = grid.support();
    let lo = support.min();
    let hi = support.max();
    // the organ (and a one-voxel rim) must lie inside the field of view
    for a in 0..3 {
        let (c, s) = (spec.organ.center[a], spec.organ.semi_axes[a]);
        if c - s < lo[a] + spec.spacing[a] || c + s > hi[a] - spec.spacing[a] {
            return Err(Error::OrganOutOfBounds);
        }
    }
    let mut ct = Volume3D::from_fn(grid, |i, j, k| {
        let p = grid.position(i, j, k);
        let mut v = spec.background_hu;
        if let Some(b) = &spec.body {
            let e = |grow: f64| {
                ((p[0] - b.center[0]) / (b.semi_axes[0] + grow)).powi(2) + ((p[1] - b.center[1]) / (b.semi_axes[1] + grow)).powi(2)
            };
            if e(0.0) > 1.0 {
                v = b.outside_hu;
            } else if e(-b.wall_thickness) > 1.0 {
                v = b.wall_hu;
            }
        }
        for t in &spec.tubes {
            if t.contains(p) {
                v = t.hu;
            }
        }
        if spec.organ.contains(p) {
            v = spec.organ.hu;
        }
        v as f32
    });
    let label = LabelVolume::from_fn(grid, |i, j, k| u8::from(spec.organ.contains(grid.position(i, j, k))));
    if spec.noise_sigma > 0.0 {
        let mut r = rng::stream(spec.seed, &[0]);
        let n = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for v in ct.data_mut() {
            *v += n.sample(&mut r) as f32;
        }
    }
    let bbox = label.bounding_box(1).ok_or(Error::OrganOutOfBounds)?;
    Ok(Phantom { ct, label, bbox })
}

/// Randomisation ranges for a dataset. Each `[lo, hi]` is sampled uniformly;
/// `lo == hi` pins the value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomRanges {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Shift of the body centre from the field-of-view centre (x, y), mm.
    pub body_shift: [[f64; 2]; 2],
    pub body_semi_axes: [[f64; 2]; 2],
    /// Organ centre relative to its anatomical anchor, mm.
    pub organ_shift: [[f64; 2]; 3],
    pub organ_semi_axes: [[f64; 2]; 3],
    pub noise_sigma: f64,
    pub fat_hu: f64,
    pub organ_hu: f64,
    pub vessel_hu: f64,
    pub bone_hu: f64,
    pub wall_hu: f64,
}

impl Default for PhantomRanges {
    fn default() -> Self {
        PhantomRanges {
            dims: [72, 60, 40],
            spacing: [2.5, 2.5, 3.0],
            body_shift: [[-8.0, 8.0], [-6.0, 6.0]],
            body_semi_axes: [[62.0, 72.0], [48.0, 56.0]],
            organ_shift: [[-8.0, 8.0], [-4.0, 4.0], [-10.0, 10.0]],
            organ_semi_axes: [[30.0, 42.0], [10.0, 15.0], [12.0, 18.0]],
            noise_sigma: 10.0,
            fat_hu: -100.0,
            organ_hu: 80.0,
            vessel_hu: 150.0,
            bone_hu: 400.0,
            wall_hu: 40.0,
        }
    }
}

fn uniform(r: &mut impl Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        r.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

impl PhantomRanges {
    /// Samples case `index` of a dataset rooted at `seed`.
    pub fn sample(&self, seed: u64, index: u64) -> PhantomSpec {
        let mut r = rng::stream(seed, &[index, 0]);
        let extent: [f64; 3] = std::array::from_fn(|a| (self.dims[a] - 1) as f64 * self.spacing[a]);
        let body_c = [extent[0] / 2.0 + uniform(&mut r, self.body_shift[0]), extent[1] / 2.0 + uniform(&mut r, self.body_shift[1])];
        let body_ax = [uniform(&mut r, self.body_semi_axes[0]), uniform(&mut r, self.body_semi_axes[1])];
        let organ_shift: [f64; 3] = std::array::from_fn(|a| uniform(&mut r, self.organ_shift[a]));
        let organ_ax: [f64; 3] = std::array::from_fn(|a| uniform(&mut r, self.organ_semi_axes[a]));

        let z_mid = extent[2] / 2.0;
        let spine = [body_c[0], body_c[1] + body_ax[1] - 20.0];
        let aorta = [body_c[0] + 8.0, spine[1] - 20.0];
        let ivc = [body_c[0] - 20.0, spine[1] - 18.0];
        let organ_c = [body_c[0] + 10.0 + organ_shift[0], aorta[1] - 14.0 - organ_ax[1] + organ_shift[1], z_mid + organ_shift[2]];
        let sv_r = 4.0;
        // horizontal vein just anterior to the organ, extending toward the patient's left
        let sv = Tube {
            point: [organ_c[0] + 12.0, organ_c[1] - organ_ax[1] - sv_r - 2.0, organ_c[2]],
            direction: [1.0, 0.0, 0.0],
            radius: sv_r,
            hu: self.vessel_hu,
            half_length: Some(organ_ax[0] + 12.0),
        };
        let vertical = |xy: [f64; 2], radius: f64, hu: f64| Tube {
            point: [xy[0], xy[1], z_mid],
            direction: [0.0, 0.0, 1.0],
            radius,
            hu,
            half_length: None,
        };
        PhantomSpec {
            dims: self.dims,
            spacing: self.spacing,
            background_hu: self.fat_hu,
            body: Some(Body { center: body_c, semi_axes: body_ax, wall_thickness: 8.0, wall_hu: self.wall_hu, outside_hu: -1000.0 }),
            tubes: vec![
                vertical(spine, 12.0, self.bone_hu),
                vertical(aorta, 6.0, self.vessel_hu),
                vertical(ivc, 7.0, self.vessel_hu),
                sv,
            ],
            organ: Organ { center: organ_c, semi_axes: organ_ax, hu: self.organ_hu },
            noise_sigma: self.noise_sigma,
            seed: rng::derive_seed(seed, &[index, 1]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub id: String,
    /// CT path, relative to the manifest directory unless absolute.
    pub ct: PathBuf,
    pub label: PathBuf,
}

/// List of cases with CT and ground-truth label volumes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub cases: Vec<CaseEntry>,
    /// Directory relative paths are resolved against; not serialised.
    #[serde(skip)]
    pub root: PathBuf,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

/// Generates `n` phantoms into `out_dir` and writes `manifest.json` there.
pub fn gen_dataset(n: usize, ranges: &PhantomRanges, seed: u64, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    if n == 0 {
        return Err(Error::InvalidConfig("dataset needs at least one case".into()));
    }
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut cases = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("case{i:03}");
        let p = gen_phantom(&ranges.sample(seed, i as u64))?;
        let ct = PathBuf::from(format!("{id}_ct.mhd"));
        let label = PathBuf::from(format!("{id}_label.mhd"));
        write_mhd(dir.join(&ct), &p.ct, ElementType::Short)?;
        write_labels(dir.join(&label), &p.label)?;
        cases.push(CaseEntry { id, ct, label });
    }
    let m = Manifest { cases, root: dir.to_path_buf() };
    m.save(dir.join("manifest.json"))?;
    Ok(m)
}
