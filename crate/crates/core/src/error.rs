use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numerical error at particle {particle}: {message}")]
    Numerical { particle: usize, message: String },
    #[error("Picard iteration did not converge in {iterations} iterations (ratios {ratios:?})")]
    Diverged { iterations: usize, ratios: Vec<f64> },
    #[error("horizon ladder diverged at rung {rung}: differences {differences:?}")]
    LadderDiverged { rung: usize, differences: Vec<f64> },
    #[error("moment blow-up: {0}")]
    MomentBlowUp(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("condition check failed: {0}")]
    Conditions(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
