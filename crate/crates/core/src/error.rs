use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("penalty parameter must be positive, got {0}")]
    NonPositiveBeta(f64),
    #[error("query point lies outside dom(h)")]
    OutsideDomain,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("box lower bound exceeds upper bound")]
    InvalidBox,
    #[error("constant {0} has invalid value {1}")]
    InvalidConstant(&'static str, f64),
    #[error("operation requires a box-indicator regularizer")]
    NotABox,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ApgError {
    #[error("invalid APG configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("line search exceeded {0} backtracks; the gradient is not Lipschitz as supplied")]
    BacktrackLimit(usize),
    #[error("non-finite objective or gradient encountered")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DualCutError {
    #[error(transparent)]
    Apg(#[from] ApgError),
    #[error("dual radius doubling exceeded {0} steps without locating the dual maximizer")]
    DoublingCap(usize),
    #[error("ellipsoid shape lost positive definiteness")]
    ShapeCorrupted,
    #[error("invalid dual search input: {0}")]
    InvalidInput(&'static str),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IalmError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Apg(#[from] ApgError),
    #[error(transparent)]
    DualCut(#[from] DualCutError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("Slater point is not strictly feasible (max g = {0})")]
    NotSlater(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QcqpError {
    #[error("invalid generator configuration: {0}")]
    InvalidConfig(String),
    #[error("Q0 is not positive definite (smallest eigenvalue {0})")]
    NotStronglyConvex(f64),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("instance too large for the reference solver (n = {n}, m = {m})")]
    TooLarge { n: usize, m: usize },
}
