use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("negative density {value:e} at grid index {index}")]
    NegativeDensity { index: usize, value: f64 },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("orbitals are not orthonormal (max deviation {0:e})")]
    NotOrthonormal(f64),
    #[error("SCF did not converge after {iterations} iterations (residual {residual:e})")]
    MaxIterations { iterations: usize, residual: f64 },
    #[error("occupied eigenvalue {index} is {value} >= 0; the system is not admissible")]
    PositiveOccupiedEigenvalue { index: usize, value: f64 },
    #[error("ground state is not a non-degenerate minimum (gamma = {0:e})")]
    NotAMinimum(f64),
    #[error("variation has occupied components of norm {0:e}")]
    NotPerp(f64),
    #[error("norm drift {drift:e} in one step at t = {t}")]
    StepTooLarge { t: f64, drift: f64 },
    #[error("non-finite state at t = {0}")]
    NonfiniteState(f64),
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("invalid transition channel: {0}")]
    ChannelInvalid(String),
    #[error("restricted resolvent is singular at z = {0}")]
    SingularRestriction(String),
    #[error("eta extrapolation did not settle: {0}")]
    NoConvergence(String),
    #[error("smoothing width too narrow: {0}")]
    SmoothingTooNarrow(String),
    #[error("linear algebra failure: {0}")]
    Linalg(String),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}
