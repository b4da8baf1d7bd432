//! Bounding-box localisation with one regression forest per box face.
//!
//! Patches are cut from the CT on a regular grid. Each training patch stores
//! its offset to every face of the ground-truth box. A tree splits on the
//! difference of two cuboid means inside the patch, choosing among random
//! (feature, threshold) pairs the one that minimises the weighted child
//! variance of the offsets, and stores a fitted normal distribution at each
//! leaf. At test time every (patch, tree) pair votes `leaf mean + patch
//! centre` and the votes are averaged.

mod patches;
mod split;

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::volume::{build_integral, BoundingBox6, Cuboid, Face, IntegralVolume, Volume3D};

pub use patches::{eval_feature, extract_patches, patches_along, CuboidFeature, Patch, PatchSample};
pub use split::{fit_leaf_gaussian_em, offset_variance, split_score};

/// Version written into serialized forests; readers reject anything else.
pub const FOREST_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestParams {
    /// Patch edge `p` in voxels.
    pub patch_size: usize,
    /// Distance between patch corners, in voxels.
    pub patch_stride: usize,
    /// Random features tried per split node (`n_F`).
    pub n_features: usize,
    /// Random thresholds tried per feature (`n_H`).
    pub n_thresholds: usize,
    /// Nodes reached by fewer patches become leaves (`n_min`).
    pub min_samples: usize,
    /// Maximum root-to-leaf depth (`D`).
    pub max_depth: usize,
    /// Trees per face (`T`).
    pub n_trees: usize,
    pub histogram_bins: usize,
    pub variance_floor: f64,
    /// Optional: drop patches whose mean intensity is below this value.
    pub min_patch_mean: Option<f64>,
    /// Optional `[lo, hi]` HU window the CT is clamped to before features
    /// are computed; `None` uses raw intensities.
    #[serde(default)]
    pub intensity_window: Option<[f64; 2]>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            patch_size: 25,
            patch_stride: 25,
            n_features: 40,
            n_thresholds: 500,
            min_samples: 20,
            max_depth: 15,
            n_trees: 8,
            histogram_bins: 64,
            variance_floor: 1e-6,
            min_patch_mean: None,
            intensity_window: None,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("forest: {m}")));
        if self.patch_size == 0 || self.patch_stride == 0 {
            return bad("patch_size and patch_stride must be >= 1");
        }
        if self.n_features == 0 || self.n_thresholds == 0 || self.n_trees == 0 {
            return bad("n_features, n_thresholds and n_trees must be >= 1");
        }
        if self.min_samples == 0 || self.histogram_bins == 0 {
            return bad("min_samples and histogram_bins must be >= 1");
        }
        if !(self.variance_floor > 0.0) {
            return bad("variance_floor must be > 0");
        }
        if self.intensity_window.is_some_and(|[lo, hi]| !(lo < hi)) {
            return bad("intensity_window must satisfy lo < hi");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split { feature: CuboidFeature, threshold: f64, left: u32, right: u32 },
    Leaf { mean: f64, variance: f64, samples: u32 },
}

/// Binary tree stored as a flat node array; node 0 is the root. A patch goes
/// left when its feature value is below the threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn leaf(mean: f64, variance: f64) -> Self {
        RegressionTree { nodes: vec![Node::Leaf { mean, variance, samples: 1 }] }
    }

    /// Leaf reached by the patch at `corner`.
    pub fn route(&self, iv: &IntegralVolume, corner: [usize; 3]) -> &Node {
        let mut n = 0usize;
        loop {
            match &self.nodes[n] {
                Node::Split { feature, threshold, left, right } => {
                    n = if feature.eval_unchecked(iv, corner) < *threshold { *left } else { *right } as usize;
                }
                leaf => return leaf,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], n: usize) -> usize {
            match &nodes[n] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left as usize).max(go(nodes, *right as usize)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, f64, u32)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { mean, variance, samples } => Some((*mean, *variance, *samples)),
            Node::Split { .. } => None,
        })
    }

    fn check(&self, patch: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidModel("empty tree".into()));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            match n {
                Node::Split { feature, threshold, left, right } => {
                    let ok = feature.is_valid_in_patch(patch)
                        && threshold.is_finite()
                        && (*left as usize) > i
                        && (*right as usize) > i
                        && (*left as usize) < self.nodes.len()
                        && (*right as usize) < self.nodes.len();
                    if !ok {
                        return Err(Error::InvalidModel(format!("bad split node {i}")));
                    }
                }
                Node::Leaf { mean, variance, .. } => {
                    if !mean.is_finite() || !variance.is_finite() {
                        return Err(Error::InvalidModel(format!("non-finite leaf {i}")));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceForest {
    pub face: Face,
    pub trees: Vec<RegressionTree>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionForest {
    pub schema_version: u32,
    pub params: ForestParams,
    /// One entry per face, in [`Face::ALL`] order.
    pub faces: Vec<FaceForest>,
}

impl RegressionForest {
    pub fn face(&self, face: Face) -> &FaceForest {
        &self.faces[face as usize]
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != FOREST_SCHEMA_VERSION {
            return Err(Error::ModelVersion { found: self.schema_version, expected: FOREST_SCHEMA_VERSION });
        }
        self.params.validate()?;
        if self.faces.len() != 6 || self.faces.iter().zip(Face::ALL).any(|(f, want)| f.face != want) {
            return Err(Error::InvalidModel("expected six face forests in canonical order".into()));
        }
        for f in &self.faces {
            if f.trees.is_empty() {
                return Err(Error::InvalidModel(format!("{:?} has no trees", f.face)));
            }
            for t in &f.trees {
                t.check(self.params.patch_size)?;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest serialises")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Loads and validates a forest. The schema version is checked before the
    /// rest of the document is interpreted.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        #[derive(Deserialize)]
        struct Probe {
            schema_version: u32,
        }
        let probe: Probe = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if probe.schema_version != FOREST_SCHEMA_VERSION {
            return Err(Error::ModelVersion { found: probe.schema_version, expected: FOREST_SCHEMA_VERSION });
        }
        let forest = Self::from_json(&text).map_err(|e| Error::json(path, e))?;
        forest.validate()?;
        Ok(forest)
    }
}

/// Patches from several volumes together with their integral volumes.
pub struct TrainingSet {
    pub volumes: Vec<IntegralVolume>,
    pub samples: Vec<PatchSample>,
}

impl TrainingSet {
    pub fn from_cases<'a>(
        cases: impl IntoIterator<Item = (&'a Volume3D, BoundingBox6)>,
        params: &ForestParams,
    ) -> Result<Self> {
        let mut volumes = Vec::new();
        let mut samples = Vec::new();
        for (v, bbox) in cases {
            let id = volumes.len();
            let iv = feature_integral(v, params);
            for patch in candidate_patches(v, &iv, params)? {
                samples.push(PatchSample::new(patch, &bbox, id));
            }
            volumes.push(iv);
        }
        if samples.is_empty() {
            return Err(Error::EmptySamples);
        }
        Ok(TrainingSet { volumes, samples })
    }
}

/// Integral volume of the CT after the optional intensity window.
fn feature_integral(v: &Volume3D, params: &ForestParams) -> IntegralVolume {
    match params.intensity_window {
        Some([lo, hi]) => build_integral(&v.map(|x| (f64::from(x).clamp(lo, hi)) as f32)),
        None => build_integral(v),
    }
}

fn candidate_patches(v: &Volume3D, iv: &IntegralVolume, params: &ForestParams) -> Result<Vec<Patch>> {
    let mut patches = extract_patches(v, params.patch_stride, params.patch_size)?;
    if let Some(min_mean) = params.min_patch_mean {
        let whole = Cuboid::new([0; 3], [params.patch_size; 3]);
        patches.retain(|p| iv.cuboid_mean_unchecked(p.corner, &whole) >= min_mean);
    }
    Ok(patches)
}

fn random_cuboid(rng: &mut ChaCha8Rng, p: usize) -> Cuboid {
    let mut lo = [0; 3];
    let mut hi = [0; 3];
    for a in 0..3 {
        let x = rng.random_range(0..p);
        let y = rng.random_range(0..p);
        lo[a] = x.min(y);
        hi[a] = x.max(y) + 1;
    }
    Cuboid::new(lo, hi)
}

fn random_feature(rng: &mut ChaCha8Rng, p: usize) -> CuboidFeature {
    CuboidFeature { first: random_cuboid(rng, p), second: random_cuboid(rng, p) }
}

struct TreeBuilder<'a> {
    samples: &'a [PatchSample],
    volumes: &'a [IntegralVolume],
    face: usize,
    params: &'a ForestParams,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    values: Vec<(f64, f64)>,
}

struct BestSplit {
    score: f64,
    feature: CuboidFeature,
    threshold: f64,
}

impl TreeBuilder<'_> {
    fn offset(&self, s: u32) -> f64 {
        self.samples[s as usize].offsets[self.face]
    }

    fn make_leaf(&mut self, idx: &[u32]) -> u32 {
        let offsets: Vec<f64> = idx.iter().map(|&s| self.offset(s)).collect();
        let (mean, variance) =
            fit_leaf_gaussian_em(&offsets, self.params.histogram_bins, self.params.variance_floor);
        self.nodes.push(Node::Leaf { mean, variance, samples: idx.len() as u32 });
        (self.nodes.len() - 1) as u32
    }

    fn best_split(&mut self, idx: &[u32]) -> Option<BestSplit> {
        let n = idx.len();
        let mean = idx.iter().map(|&s| self.offset(s)).sum::<f64>() / n as f64;
        let mut best: Option<BestSplit> = None;
        let mut prefix = vec![(0.0f64, 0.0f64); n + 1];
        for _ in 0..self.params.n_features {
            let feature = random_feature(&mut self.rng, self.params.patch_size);
            self.values.clear();
            for &s in idx {
                let smp = &self.samples[s as usize];
                let value = feature.eval_unchecked(&self.volumes[smp.volume], smp.patch.corner);
                self.values.push((value, smp.offsets[self.face] - mean));
            }
            self.values.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (lo, hi) = (self.values[0].0, self.values[n - 1].0);
            if !(lo < hi) {
                continue;
            }
            for (i, &(_, d)) in self.values.iter().enumerate() {
                prefix[i + 1] = (prefix[i].0 + d, prefix[i].1 + d * d);
            }
            let (tot, tot2) = prefix[n];
            for _ in 0..self.params.n_thresholds {
                let threshold = self.rng.random_range(lo..hi);
                let nl = self.values.partition_point(|&(v, _)| v < threshold);
                // lo < threshold < hi keeps both sides nonempty
                if nl == 0 || nl == n {
                    continue;
                }
                let (sl, sl2) = prefix[nl];
                let (sr, sr2) = (tot - sl, tot2 - sl2);
                let score = ((sl2 - sl * sl / nl as f64) + (sr2 - sr * sr / (n - nl) as f64)) / n as f64;
                if best.as_ref().is_none_or(|b| score < b.score) {
                    best = Some(BestSplit { score, feature, threshold });
                }
            }
        }
        best
    }

    fn build(&mut self, idx: &mut [u32], depth: usize) -> u32 {
        if idx.len() < self.params.min_samples || depth >= self.params.max_depth || idx.len() < 2 {
            return self.make_leaf(idx);
        }
        let offsets: Vec<f64> = idx.iter().map(|&s| self.offset(s)).collect();
        let parent = offset_variance(&offsets).unwrap_or(0.0);
        let Some(split) = self.best_split(idx) else {
            return self.make_leaf(idx);
        };
        if !(split.score < parent) {
            return self.make_leaf(idx);
        }
        let mut left_count = 0;
        for i in 0..idx.len() {
            let smp = &self.samples[idx[i] as usize];
            if split.feature.eval_unchecked(&self.volumes[smp.volume], smp.patch.corner) < split.threshold {
                idx.swap(i, left_count);
                left_count += 1;
            }
        }
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { mean: 0.0, variance: 0.0, samples: 0 });
        let (l, r) = idx.split_at_mut(left_count);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[me] = Node::Split { feature: split.feature, threshold: split.threshold, left, right };
        me as u32
    }
}

/// Grows one tree for `face` from `samples`, whose `volume` fields index
/// into `volumes`.
pub fn train_tree(
    samples: &[PatchSample],
    face: Face,
    volumes: &[IntegralVolume],
    params: &ForestParams,
    rng: ChaCha8Rng,
) -> Result<RegressionTree> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut b = TreeBuilder {
        samples,
        volumes,
        face: face as usize,
        params,
        rng,
        nodes: Vec::new(),
        values: Vec::with_capacity(samples.len()),
    };
    let mut idx: Vec<u32> = (0..samples.len() as u32).collect();
    b.build(&mut idx, 0);
    Ok(RegressionTree { nodes: b.nodes })
}

/// Trains all six face forests; tree `t` of face `f` draws from the stream
/// `(seed, f, t)` so results do not depend on scheduling.
pub fn train_forest(set: &TrainingSet, params: &ForestParams) -> Result<RegressionForest> {
    params.validate()?;
    let mut faces = Vec::with_capacity(6);
    for face in Face::ALL {
        let trees = (0..params.n_trees)
            .map(|t| {
                let rng = rng::stream(params.seed, &[face as u64, t as u64]);
                train_tree(&set.samples, face, &set.volumes, params, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        faces.push(FaceForest { face, trees });
    }
    Ok(RegressionForest { schema_version: FOREST_SCHEMA_VERSION, params: params.clone(), faces })
}

/// Convenience wrapper: patches from every `(volume, box)` pair, then
/// [`train_forest`].
pub fn train_from_cases<'a>(
    cases: impl IntoIterator<Item = (&'a Volume3D, BoundingBox6)>,
    params: &ForestParams,
) -> Result<RegressionForest> {
    let set = TrainingSet::from_cases(cases, params)?;
    train_forest(&set, params)
}

fn face_votes(forest: &RegressionForest, face: Face, iv: &IntegralVolume, patches: &[Patch]) -> f64 {
    let trees = &forest.face(face).trees;
    let mut sum = 0.0;
    for p in patches {
        let centre = p.center6()[face as usize];
        for t in trees {
            if let Node::Leaf { mean, .. } = t.route(iv, p.corner) {
                sum += mean + centre;
            }
        }
    }
    sum / (patches.len() * trees.len()) as f64
}

fn test_patches(forest: &RegressionForest, v: &Volume3D, iv: &IntegralVolume) -> Result<Vec<Patch>> {
    let patches = candidate_patches(v, iv, &forest.params)?;
    if patches.is_empty() {
        return Err(Error::EmptySamples);
    }
    Ok(patches)
}

/// Mean over all (patch, tree) pairs of `leaf mean + patch centre`.
pub fn predict_face(forest: &RegressionForest, face: Face, v: &Volume3D) -> Result<f64> {
    let iv = feature_integral(v, &forest.params);
    let patches = test_patches(forest, v, &iv)?;
    Ok(face_votes(forest, face, &iv, &patches))
}

pub fn estimate_bounding_box(forest: &RegressionForest, v: &Volume3D) -> Result<BoundingBox6> {
    let iv = feature_integral(v, &forest.params);
    let patches = test_patches(forest, v, &iv)?;
    let faces = Face::ALL.map(|f| face_votes(forest, f, &iv, &patches));
    Ok(BoundingBox6::from_faces_repaired(faces))
}
