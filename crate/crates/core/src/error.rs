use thiserror::Error;

/// Errors raised while building or analysing a tracking loop.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("integrator gain k_xi is numerically singular (condition number {cond:.3e})")]
    SingularGain { cond: f64 },

    #[error("steady-state matrix A_a is singular (condition number {cond:.3e}); the output cannot track arbitrary references")]
    SingularAa { cond: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("first-layer half-widths must be strictly positive (entry {index} = {value})")]
    NonPositiveD { index: usize, value: f64 },

    #[error("steady-state pre-activation of neuron {neuron} in layer {layer} lies outside its interval")]
    StarOutsideBox { layer: usize, neuron: usize },

    #[error("no admissible reference keeps the current state inside the certified region")]
    GovernorInfeasible,

    #[error("unknown solver backend `{0}`")]
    UnknownBackend(String),

    #[error("malformed input: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
