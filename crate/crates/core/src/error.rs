use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("series too short: {len} rows given, at least {required} required ({reason})")]
    SeriesTooShort {
        len: usize,
        required: usize,
        reason: String,
    },

    #[error("reservoir construction failed: {0}")]
    Construction(String),

    #[error("ridge system is rank deficient ({0}); use a ridge parameter > 0")]
    RankDeficient(String),

    #[error("integration diverged at step {step} (dt = {dt})")]
    IntegrationDiverged { step: usize, dt: f64 },

    #[error("cannot target an SNR: {0}")]
    CannotTargetSnr(String),

    #[error("tuning failed: all {trials} trials failed")]
    TuningFailed { trials: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
