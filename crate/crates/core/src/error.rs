use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("function is not anchored at the left endpoint: |x(alpha)| = {value:e}")]
    NotAnchoredAtAlpha { value: f64 },

    #[error("grid functions live on different grids")]
    GridMismatch,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("point (t = {t}, tau = {tau}) lies outside the triangle alpha <= tau <= t <= beta")]
    OutsideTriangle { t: f64, tau: f64 },

    #[error("grid [{alpha}, {beta}] is not contained in the kernel domain")]
    GridOutsideDomain { alpha: f64, beta: f64 },

    #[error("kernel contract violated: {0}")]
    KernelContract(String),

    #[error("kernel does not declare the growth bound `{0}`")]
    MissingBounds(&'static str),

    #[error("singular diagonal block at node {index}; refine the grid")]
    SingularBlock { index: usize },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    MaxIterExceeded { iterations: usize, residual: f64 },

    #[error("line search stalled at iteration {iteration} (residual {residual:e})")]
    LineSearchStalled { iteration: usize, residual: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed data: {0}")]
    Parse(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
