use nalgebra::DVector;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("projection did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64, last: DVector<f64> },

    #[error("quadrature did not converge on [{lo}, {hi}] (error estimate {estimate:e})")]
    Quadrature { lo: f64, hi: f64, estimate: f64 },

    #[error("round {round}: {source}")]
    AtRound {
        round: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Attach the (1-based) round index to an error raised inside an online loop.
    pub fn at_round(self, round: usize) -> Self {
        match self {
            Error::AtRound { .. } => self,
            other => Error::AtRound { round, source: Box::new(other) },
        }
    }

    /// Whether the failure is numerical (as opposed to a bad input or config).
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NoConvergence { .. } | Error::Quadrature { .. } => true,
            Error::AtRound { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
