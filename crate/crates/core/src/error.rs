use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("field shape {got:?} does not match grid shape {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("non-finite value in field `{label}` at ({i}, {j})")]
    NonFinite { label: String, i: usize, j: usize },

    #[error("analytic solution requires a Gaussian initial condition, got {0}")]
    UnsupportedAnalyticIc(String),

    #[error("explicit time step {dt:e} exceeds stability bound {bound:e}")]
    Stability { dt: f64, bound: f64 },

    #[error("solver diverged at internal step {step}")]
    Divergence { step: usize },

    #[error("need at least {needed} points along {axis}, got {got}")]
    InsufficientPoints {
        axis: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("local fit at ({i}, {j}) is singular (condition number {condition:e})")]
    SingularFit { i: usize, j: usize, condition: f64 },

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    TrainingDiverged { epoch: usize, batch: usize },

    #[error("invalid training configuration: {0}")]
    InvalidTrainConfig(String),

    #[error("subsampling left no rows in the library")]
    EmptyLibrary,

    #[error("unknown library term `{0}`")]
    UnknownTerm(String),

    #[error("every starting vertex of the simplex diverged; try smaller initial coefficients")]
    SimplexInit,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stale artifact {path}: {reason}")]
    StaleArtifact { path: PathBuf, reason: String },

    #[error("malformed artifact {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}
