use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("external magnetic field vanishes at sample {site}")]
    ZeroExternalField { site: usize },
    #[error("direction is not a unit vector (|b| = {norm})")]
    DegenerateDirection { norm: f64 },
    #[error("shifted matrix is singular (|d| = {det:e}); collision frequency must be positive")]
    SingularShift { det: f64 },
    #[error("zeta = {zeta:e} is not positive")]
    NonPositiveZeta { zeta: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dt = {dt:e} exceeds the CFL bound {dt_max:e}")]
    CflViolation { dt: f64, dt_max: f64 },
    #[error("iterative solve stopped after {iterations} iterations with relative residual {residual:e}")]
    IterativeSolveFailure { iterations: usize, residual: f64 },
    #[error("lambda = {lambda:e} is not admissible (lambda*|M| = {bound:e})")]
    NonAdmissibleLambda { lambda: f64, bound: f64 },
    #[error("shift omega = {omega} is near a discrete eigenvalue (relative residual {residual:e})")]
    NearSingularShift { omega: f64, residual: f64 },
    #[error("degenerate series: {0}")]
    DegenerateSeries(String),
    #[error("eigensolve failed: {0}")]
    EigensolveFailure(String),
    #[error("singular value iteration did not converge at beta = {beta}")]
    ConvergenceFailure { beta: f64 },
    #[error("boundary data given on a face that is not Silver-Muller: {0}")]
    UnsupportedFace(String),
    #[error("initial data incompatible with boundary data (trace mismatch {mismatch:e})")]
    IncompatibleInitialData { mismatch: f64 },
    #[error("state became non-finite at step {step}")]
    NonFiniteState { step: usize },
    #[error("parse error at {pointer}: {message}")]
    Parse { pointer: String, message: String },
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
