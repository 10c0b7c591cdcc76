use thiserror::Error;

/// Errors surfaced by the allocation library.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Matrix/vector dimensions do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// The closed-form power rule produced a negative component for this
    /// draw; the interior-solution assumption does not hold there.
    #[error("infeasible power allocation: user {user} got {power_w} W for gain draw {draw}")]
    InfeasiblePower { user: usize, power_w: f64, draw: usize },

    /// A stochastic search ran out of iterations. The trace taken so far is
    /// attached for diagnosis.
    #[error("bandwidth search did not converge within {iters} iterations (last W = {last_w_hz} Hz, residual = {last_residual})")]
    SearchDidNotConverge {
        iters: usize,
        last_w_hz: f64,
        last_residual: f64,
        trace: Vec<(usize, f64, f64)>,
    },

    /// Training state blew past its documented caps.
    #[error("training diverged at frame {frame}: {what}")]
    Diverged { frame: usize, what: String },

    /// A NaN/Inf appeared mid-computation.
    #[error("non-finite value in {context} (user {user}, draw {draw})")]
    NonFinite { context: &'static str, user: usize, draw: usize },

    /// Checkpoint or config file could not be understood.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
