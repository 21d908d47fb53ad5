use thiserror::Error;

/// Errors produced by the library.
///
/// Every variant carries a stable machine-readable code (see [`Error::code`]) which the
/// command-line front end reports verbatim.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{name} = {value} is outside [-{bound}, {bound}]")]
    OutOfBounds {
        name: &'static str,
        value: f64,
        bound: f64,
    },
    #[error("point is behind the camera (depth {depth:e})")]
    BehindCamera { depth: f64 },
    #[error("degenerate 6D rotation: columns are zero or parallel")]
    DegenerateRotation,
    #[error("matrix is not a rotation: {0}")]
    NotRotation(String),
    #[error("need at least {needed} valid points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("camera sampling exhausted after {attempts} attempts")]
    SamplingExhausted { attempts: usize },
    #[error("vector must be unit length, norm is {norm}")]
    NonUnitVector { norm: f64 },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("no landmark could be lifted (each needs two visible views)")]
    NothingLiftable,
    #[error("landmarks {0:?} are not valid in any pseudo-label set")]
    Coverage(Vec<usize>),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("landmark map entry {entry} points at prediction {index}, which does not exist (N = {len})")]
    UnmappedIndex { entry: usize, index: usize, len: usize },
    #[error("underdetermined fit: {0}")]
    Underdetermined(String),
    #[error("numerical failure at iteration {iteration}: {message}; cost trace {trace:?}")]
    Numerical {
        iteration: usize,
        message: String,
        trace: Vec<f64>,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unsupported schema_version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("document does not match its schema: {0}")]
    Schema(String),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::OutOfBounds { .. } => "out_of_bounds",
            Error::BehindCamera { .. } => "behind_camera",
            Error::DegenerateRotation => "degenerate_rotation",
            Error::NotRotation(_) => "not_rotation",
            Error::InsufficientPoints { .. } => "insufficient_points",
            Error::SamplingExhausted { .. } => "sampling_exhausted",
            Error::NonUnitVector { .. } => "non_unit_vector",
            Error::DegenerateGeometry(_) => "degenerate_geometry",
            Error::NothingLiftable => "nothing_liftable",
            Error::Coverage(_) => "coverage",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::Empty(_) => "empty_input",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::UnmappedIndex { .. } => "unmapped_index",
            Error::Underdetermined(_) => "underdetermined",
            Error::Numerical { .. } => "numerical",
            Error::InvalidConfig(_) => "invalid_config",
            Error::SchemaVersion { .. } => "schema_version",
            Error::Schema(_) => "schema_violation",
            Error::Json(_) => "malformed_json",
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => "missing_file",
            Error::Io { .. } => "io_error",
        }
    }

    /// Failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical { .. }
                | Error::DegenerateGeometry(_)
                | Error::NothingLiftable
                | Error::SamplingExhausted { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
