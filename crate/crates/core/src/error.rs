use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("element count mismatch: header declares {expected} voxels, payload holds {found}")]
    ElementCountMismatch { expected: usize, found: usize },

    #[error("unsupported element type `{0}`")]
    UnsupportedElementType(String),

    #[error("unsupported orientation: {0}")]
    UnsupportedOrientation(String),

    #[error("invalid volume geometry: {0}")]
    InvalidGeometry(String),

    #[error("cuboid {lo:?}..{hi:?} at corner {corner:?} lies outside volume {dims:?}")]
    OutOfBounds {
        corner: [usize; 3],
        lo: [usize; 3],
        hi: [usize; 3],
        dims: [usize; 3],
    },

    #[error("box does not intersect the volume support")]
    EmptyIntersection,

    #[error("volume {dims:?} is smaller than a {patch}-voxel patch")]
    VolumeSmallerThanPatch { dims: [usize; 3], patch: usize },

    #[error("empty sample set")]
    EmptySamples,

    #[error("zero variance input: similarity undefined")]
    UndefinedSimilarity,

    #[error("frame mismatch: {0}")]
    FrameMismatch(String),

    #[error("no database candidate has positive similarity")]
    EmptySelection,

    #[error("degenerate atlas: the {0} class has no support")]
    DegenerateAtlas(&'static str),

    #[error("model schema version {found} is not supported (expected {expected})")]
    ModelVersion { found: u32, expected: u32 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("image encoding error: {0}")]
    Image(#[from] image::ImageError),

    #[error("organ does not fit inside the phantom volume")]
    OrganOutOfBounds,

    #[error("{0}")]
    Stage(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }
}
