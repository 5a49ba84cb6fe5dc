use std::path::PathBuf;

/// Errors raised anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("rejection sampler exhausted its budget of {attempts} attempts")]
    RejectionBudget { attempts: u64 },

    #[error("design matrix is singular at column {index} ({name})")]
    Singular { index: usize, name: String },

    #[error("response has a single class; probit model is not identified")]
    SingleClass,

    #[error("{0}")]
    Estimability(String),

    #[error("calibration target {target} is not bracketed: achievable range [{lo}, {hi}]")]
    Calibration { target: f64, lo: f64, hi: f64 },

    #[error("graph error on line {line}: {msg}")]
    DagParse { line: usize, msg: String },

    #[error("graph contains a cycle through `{0}`")]
    Cycle(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("resampling failed for {estimator}: {msg}")]
    Resampling { estimator: String, msg: String },

    #[error("scenario failed: {0}")]
    Scenario(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
