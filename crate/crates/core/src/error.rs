use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Subdividing past the deepest representable dyadic level.
    #[error("cell level {level} exceeds the maximum supported level {max}")]
    Capacity { level: u32, max: u32 },

    /// A structural precondition was broken, e.g. refining a cell that is not a leaf.
    #[error("inconsistent input: {0}")]
    Consistency(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported dimension {dim} (at most {max} supported)")]
    UnsupportedDimension { dim: usize, max: usize },

    #[error("solver did not reach duality gap {tol:.3e} within {iterations} iterations (gap {gap:.3e})")]
    NonConvergence { iterations: usize, gap: f64, tol: f64 },

    #[error("weight {index} crossed zero during fine-tuning at step {step}; retry with a smaller step")]
    DegeneratePath { index: usize, step: usize },

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Strips iteration context to expose the underlying failure.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtIteration { source, .. } => source.root(),
            other => other,
        }
    }
}
