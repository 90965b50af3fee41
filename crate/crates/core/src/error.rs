use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown {kind} `{name}`")]
    UnknownFamily { kind: &'static str, name: String },

    #[error("invalid parameters for `{family}`: {reason}")]
    InvalidParameter { family: String, reason: String },

    #[error("step law is not centred: mean {0:?}")]
    NotCentered(Vec<f64>),

    #[error("covariance matrix is not symmetric positive definite")]
    DegenerateCovariance,

    #[error("`{0}` has a continuous backend; exact evaluation needs a lattice step law")]
    ContinuousBackend(String),

    #[error("convolution budget exceeded: {needed} cells requested, budget {budget}")]
    BudgetExceeded { needed: usize, budget: usize },

    #[error("derivative order {0} exceeds the supported maximum of 4")]
    DerivativeOrder(usize),

    #[error("smoothness class {have} is below the required {need}")]
    Smoothness { have: u8, need: u8 },

    #[error("quadrature order {order} insufficient: error estimate {estimate:e} exceeds tolerance {tol:e}")]
    QuadratureInsufficient {
        order: usize,
        estimate: f64,
        tol: f64,
    },

    #[error("numerical integration failed: {0}")]
    Integration(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("infinite moment: E|X|^{0} diverges")]
    InfiniteMoment(f64),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
