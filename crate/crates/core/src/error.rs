use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("scenario generation failed for {difficulty:?} seed {seed} after {attempts} attempts")]
    Generation {
        difficulty: crate::world::Difficulty,
        seed: u64,
        attempts: usize,
    },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("config error: {}", .problems.join("; "))]
    Config { problems: Vec<String> },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config hash mismatch: checkpoint was trained with {checkpoint}, config hashes to {config}")]
    ConfigHashMismatch { checkpoint: String, config: String },

    #[error("singular barrier gradient: |grad h| = {norm:e} <= {threshold:e}")]
    SingularGradient { norm: f64, threshold: f64 },

    #[error("non-finite value in {stage}: {detail}")]
    NonFinite { stage: &'static str, detail: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn config(problem: impl Into<String>) -> Self {
        Error::Config {
            problems: vec![problem.into()],
        }
    }
}
