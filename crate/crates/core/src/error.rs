use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: cannot parse `{value}` in column `{column}`")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: {message}")]
    OutOfRange { row: usize, message: String },

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("constant column `{0}` cannot be normalized")]
    ConstantColumn(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown source label `{0}`")]
    UnknownSource(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("Cholesky factorization failed at hyperparameters {hyperparams}")]
    Cholesky { hyperparams: String },

    #[error("negative predictive variance {0:e} exceeds round-off tolerance")]
    NegativeVariance(f64),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Unsupported(_) => 2,
            Error::Io { .. } => 3,
            Error::Csv(_)
            | Error::Json(_)
            | Error::MissingColumn(_)
            | Error::Parse { .. }
            | Error::OutOfRange { .. }
            | Error::DuplicateId(_)
            | Error::InvalidData(_)
            | Error::ConstantColumn(_)
            | Error::UnknownSource(_)
            | Error::DimensionMismatch { .. } => 4,
            Error::Cholesky { .. } | Error::NegativeVariance(_) | Error::Optimization(_) => 5,
            Error::Image(_) => 6,
        }
    }
}
