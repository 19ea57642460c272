use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An iterative solve stopped without reaching its tolerance.
    #[error("{what}: no convergence after {iters} iterations (relative residual {residual:.3e})")]
    SolverFailure {
        what: String,
        iters: usize,
        residual: f64,
    },

    /// CG met a direction with non-positive curvature.
    #[error("operator is not SPD: p'Ap = {curvature:.3e} at iteration {iter}")]
    NotSpd { iter: usize, curvature: f64 },

    #[error("bridge failure: {0}")]
    Bridge(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("outer iteration {iter}: {source}")]
    AtIteration {
        iter: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
