use crate::expr::tape::TapeDomainError;
use crate::expr::EvalError;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("variable index {index} out of range for arity {arity}")]
    VarOutOfRange { index: usize, arity: usize },
    #[error("arity mismatch: {left} vs {right}")]
    ArityMismatch { left: usize, right: usize },
    #[error("cannot differentiate nonsmooth node `{0}`")]
    NonSmooth(&'static str),
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    TapeDomain(#[from] TapeDomainError),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("initial gain is not stabilizing: {0}")]
    NotStabilizing(String),
    #[error("iteration stalled after {iterations} steps (residual {residual:e})")]
    Stalled { iterations: usize, residual: f64 },
    #[error("budget exhausted: {0}")]
    Budget(String),
    #[error("refusing to proceed: {0}")]
    Unverified(String),
    #[error("no admissible decreasing input at {point:?}: {detail}")]
    Infeasible { point: Vec<f64>, detail: String },
    #[error("simulation failed at t = {t}: {source}")]
    Simulation { t: f64, source: Box<Error> },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
