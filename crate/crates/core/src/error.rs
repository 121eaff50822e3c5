use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid length: {0}")]
    InvalidLength(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("loss is detached from the tape; nothing to differentiate")]
    EmptyTape,

    #[error("zero-norm row {row} in weight normalization")]
    Singularity { row: usize },

    #[error("kernel horizon exceeded: (K-1)*stride = {span} > max step {max_step}")]
    Horizon { span: usize, max_step: usize },

    #[error("kernel network produced non-finite values (omega0 = {omega0})")]
    KernelDivergence { omega0: f64 },

    #[error("training diverged: non-finite gradient in parameter `{param}`")]
    Divergence { param: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("incompatible checkpoint: {0}")]
    Compatibility(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Compatibility(_) | Error::Horizon { .. } | Error::Json(_) => 2,
            Error::Data(_) | Error::Parse { .. } | Error::Schema(_) | Error::Io(_) => 3,
            Error::Divergence { .. } | Error::KernelDivergence { .. } | Error::NonFinite(_) => 4,
            _ => 1,
        }
    }
}
