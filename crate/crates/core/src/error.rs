use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("parameter index {index} is not in the parameter set of state {state} (size {len})")]
    ParameterDomain { state: usize, index: usize, len: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("enumeration exceeded the node budget of {budget}")]
    EnumerationBudget { budget: usize },

    #[error("value iteration did not converge within {sweeps} sweeps (residual {residual:e})")]
    Convergence { sweeps: usize, residual: f64 },

    #[error("training aborted at iteration {iteration}: {what} is not finite")]
    NonFinite { iteration: usize, what: String },

    #[error("policy shape mismatch: {0}")]
    Shape(String),

    #[error("config error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}
