use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("step index {t} out of range 0..={steps}")]
    StepOutOfRange { t: usize, steps: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("score is undefined at sigma = 0")]
    ZeroSigma,

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("sigma ordering violated: next level {next} must be below current level {current}")]
    Ordering { current: f64, next: f64 },

    #[error("unknown condition {0}")]
    UnknownCondition(u32),

    #[error("unknown denoiser id `{0}`")]
    UnknownDenoiser(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("training diverged at iteration {step} (loss = {loss})")]
    TrainingDiverged {
        step: usize,
        loss: f64,
        trace: Vec<f64>,
    },

    #[error("no schedule fits the budget {budget}")]
    NoFeasibleSchedule { budget: f64 },

    #[error("lookup table row {0} has no measured quality")]
    MissingQuality(usize),

    #[error("trajectory pairing error: {0}")]
    Pairing(String),

    #[error("unsupported data: {0}")]
    UnsupportedData(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
