use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownVariable { name: String, pos: usize },

    #[error("numeric domain error: {0}")]
    Domain(String),

    #[error("missing field `{0}`")]
    MissingField(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("impulse index {0} is not a member of the impulse set")]
    NotInImpulseSet(usize),

    #[error("non-finite state at step {step} on path {path}")]
    NonFiniteState { path: usize, step: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("regression rank deficiency at slice {slice}")]
    RankDeficient { slice: usize },

    #[error("CFL violation: time step {dt} exceeds stable bound {max_dt}")]
    Cfl { dt: f64, max_dt: f64 },

    #[error("cross-diffusion is not diagonally dominant at node {node} (action {action})")]
    DiagonalDominance { node: usize, action: usize },

    #[error("obstacle iteration did not converge at slice {slice} after {iterations} sweeps (worst node {node}, change {change:e})")]
    NonConvergence {
        slice: usize,
        iterations: usize,
        node: usize,
        change: f64,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// Errors that come from the numerics rather than the input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::NonFiniteState { .. }
                | Error::NonFinite(_)
                | Error::RankDeficient { .. }
                | Error::Cfl { .. }
                | Error::DiagonalDominance { .. }
                | Error::NonConvergence { .. }
        )
    }
}
