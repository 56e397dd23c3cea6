use thiserror::Error;

/// Errors produced by case parsing, model construction, and bound evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("validation failed: {invariant}")]
    Validation { invariant: String },

    #[error("branch {from}-{to} has zero series impedance")]
    SingularBranch { from: usize, to: usize },

    #[error("power flow Jacobian is singular at the base point (rcond estimate {rcond:.3e})")]
    SingularJacobian { rcond: f64 },

    #[error("base point violates operational constraints: {detail}")]
    InfeasibleBase { detail: String },

    #[error("envelope domain violated: {detail}")]
    Domain { detail: String },

    #[error("precondition violated: {detail}")]
    Precondition { detail: String },

    #[error("base power flow did not converge: {detail}")]
    BaseDiverged { detail: String },

    #[error("soundness invariant breached: {detail}")]
    Soundness { detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(invariant: impl Into<String>) -> Self {
        Error::Validation {
            invariant: invariant.into(),
        }
    }

    pub fn syntax(line: usize, message: impl Into<String>) -> Self {
        Error::Syntax {
            line,
            message: message.into(),
        }
    }
}
