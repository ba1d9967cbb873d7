use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid mesh input: {0}")]
    Mesh(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("field bound to generation {found}, mesh is generation {expected}")]
    GenerationMismatch { expected: u64, found: u64 },
    #[error("input does not have zero mean (mean {mean:e})")]
    NotZeroMean { mean: f64 },
    #[error("linear solver did not converge (relative residual {residual:e})")]
    LinearSolve { residual: f64 },
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("newton solver failed at t = {t}: {reason}")]
    Newton { t: f64, reason: String },
    #[error("eigen solver stagnated at residual {residual:e} (best lambda {lambda})")]
    EigenStagnation { lambda: f64, residual: f64 },
    #[error("config line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config constraint violated: {0}")]
    Constraint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {what}: {msg}")]
    Format { what: String, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigParse { .. } | Error::UnknownKey(_) | Error::Constraint(_) => 1,
            Error::Io { .. } | Error::Format { .. } => 3,
            _ => 2,
        }
    }
}
