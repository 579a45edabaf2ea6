use thiserror::Error;

/// Errors produced by model construction, fitting, prediction, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument was outside its documented range or not finite.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two inputs that must agree in size did not.
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// The design contains duplicate or effectively coincident points.
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    /// A correlation matrix could not be factorized even after diagonal
    /// regularization.
    #[error(
        "singular {n}x{n} correlation matrix (max jitter tried {max_jitter:.3e}): {detail}"
    )]
    SingularMatrix {
        n: usize,
        max_jitter: f64,
        detail: String,
    },

    /// Every optimizer restart failed to produce a usable parameter set.
    #[error("estimation failed: {detail}")]
    EstimationFailed {
        detail: String,
        report: Option<Box<crate::estimate::FitReport>>,
    },

    /// The regression basis is rank deficient on the given design.
    #[error("ill-posed regression basis: {0}")]
    IllPosedBasis(String),

    /// A stored model declares a schema this build does not understand.
    #[error("unsupported archive schema version {found} (this build reads version {supported})")]
    SchemaVersion { found: u64, supported: u64 },

    /// A data or archive file could not be parsed.
    #[error("parse error{}: {detail}", offset_suffix(*.byte_offset))]
    Parse {
        detail: String,
        byte_offset: Option<u64>,
    },

    /// An underlying filesystem operation failed.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn offset_suffix(byte_offset: Option<u64>) -> String {
    match byte_offset {
        Some(b) => format!(" at byte {b}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(detail: impl Into<String>, byte_offset: Option<u64>) -> Self {
        Error::Parse {
            detail: detail.into(),
            byte_offset,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
