use thiserror::Error;

/// Errors surfaced by mesh loading, operator assembly, subspace construction
/// and the reduced solver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("degenerate tetrahedra (|volume| below {threshold:e}): {tets:?}")]
    DegenerateTets { tets: Vec<usize>, threshold: f64 },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid material: {0}")]
    InvalidMaterial(String),

    #[error("invalid rig: {0}")]
    InvalidRig(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("requested {requested} modes but the constrained weight space has dimension {available}")]
    TooManyModes { requested: usize, available: usize },

    #[error("requested {requested} clusters for {available} tetrahedra")]
    TooManyClusters { requested: usize, available: usize },

    #[error("eigen solve failed: {0}")]
    Eigen(String),

    #[error("system matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("matrix is not a rotation: {0}")]
    NotRotation(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cache error: {0}")]
    Cache(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
