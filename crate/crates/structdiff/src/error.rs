use thiserror::Error;

/// Unified error type for the whole crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("timestep {t} outside 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("batch of {n} points in {d} dimensions is too small for a covariance estimate (need at least {min})")]
    BatchTooSmall { n: usize, d: usize, min: usize },

    #[error("singular covariance: smallest eigenvalue {0:.3e} is below 1e-12")]
    SingularCovariance(f64),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged: non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("forward cache is stale: parameters changed after the cached pass")]
    StaleCache,

    #[error("histogram grids differ: {0}")]
    GridMismatch(String),

    #[error("histogram is not a density: {0}")]
    BadHistogram(String),

    #[error("{measure} has no scalar statistic for histogram comparison")]
    UnsupportedMeasure { measure: String },

    #[error("neighbor count k={k} must satisfy 1 <= k < n={n}")]
    BadNeighborCount { k: usize, n: usize },

    #[error("{path}:{line}: {msg}")]
    MalformedCsv {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("checkpoint {path}: {msg}")]
    BadCheckpoint { path: String, msg: String },

    #[error("no baseline run for dataset={dataset}, schedule={schedule}")]
    MissingBaseline { dataset: String, schedule: String },

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Attaches a path to a raw I/O error.
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
