use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("generator produced a degenerate graph after {attempts} attempts")]
    DegenerateDraw { attempts: usize },

    #[error("trajectory exceeded the overflow guard after {attempts} coefficient draws")]
    UnstableTrajectory { attempts: usize },

    #[error("integration blew up at internal step {step}")]
    IntegrationBlowup { step: usize },

    #[error("training diverged at epoch {epoch}")]
    TrainingDivergence { epoch: usize },

    #[error("extracted score matrix is identically zero off the diagonal")]
    DegenerateExtraction,

    #[error("coordinate descent did not converge after {sweeps} sweeps (gap {gap:e})")]
    Convergence { sweeps: usize, gap: f64 },

    #[error("AUROC undefined: {0}")]
    UndefinedAuroc(String),

    #[error("ground truth undefined: {0}")]
    UndefinedTruth(String),

    #[error("incomplete grid, missing: {}", .0.join(", "))]
    IncompleteGrid(Vec<String>),

    #[error("ingestion failed: {0}")]
    Ingestion(String),

    #[error("registration failed: {0}")]
    Registration(String),

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
