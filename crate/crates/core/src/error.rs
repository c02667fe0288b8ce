use thiserror::Error;

pub type Result<T> = std::result::Result<T, CarnotError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CarnotError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("structural error: {0}")]
    Structural(String),

    #[error("singularity: {0}")]
    Singularity(String),

    #[error("point lies in the characteristic set (|grad_0 d| / d = {0:e})")]
    CharacteristicSet(f64),

    #[error("flow singularity: {0}")]
    FlowSingularity(String),

    #[error("accuracy error: {0}")]
    Accuracy(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl CarnotError {
    /// True for failures caused by numerical non-convergence rather than bad input.
    pub fn is_accuracy(&self) -> bool {
        matches!(
            self,
            CarnotError::Accuracy(_) | CarnotError::FlowSingularity(_)
        )
    }
}

impl From<std::io::Error> for CarnotError {
    fn from(e: std::io::Error) -> Self {
        CarnotError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CarnotError {
    fn from(e: serde_json::Error) -> Self {
        CarnotError::Io(e.to_string())
    }
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(CarnotError::Domain(msg.into()))
}
