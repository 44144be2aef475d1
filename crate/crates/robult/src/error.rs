use thiserror::Error;

/// Crate-wide error type. CLI exit codes map `Config` to 2 and the numeric
/// family (`NonFinite`, `DegenerateRow`, `Domain`) to 3.
#[derive(Debug, Error)]
pub enum RobultError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("degenerate row {row}: norm {norm:.3e} is below 1e-12")]
    DegenerateRow { row: usize, norm: f64 },

    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("batch of {0} rows is too small; contrastive terms need at least 2")]
    BatchTooSmall(usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("checkpoint version mismatch: file has version {found}, this build reads {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),

    #[error("dataset format: {0}")]
    DatasetFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RobultError {
    /// True for failures that indicate the numbers went bad (as opposed to
    /// bad input or bad configuration).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            RobultError::NonFinite(_)
                | RobultError::DegenerateRow { .. }
                | RobultError::Domain { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, RobultError>;
