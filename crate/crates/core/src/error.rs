use thiserror::Error;

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    /// A caller-supplied argument violates an operation's precondition.
    #[error("invalid input: {0}")]
    Input(String),

    /// The adaptive integrator could not keep the step size above the floor.
    #[error("integration failed at t = {last_good_t}: {reason}")]
    Integration { last_good_t: f64, reason: String },

    /// Adaptive quadrature hit its refinement limit; `partial` is the value so far.
    #[error("quadrature did not converge (partial value {partial}, error estimate {error})")]
    Quadrature { partial: f64, error: f64 },

    /// The request is well-formed but refused on cost grounds.
    #[error("refused: {0}")]
    Refused(String),
}

impl LabError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        LabError::Input(msg.into())
    }
}
