use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the core numerical routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in `{field}`: expected {expected}, found {found}")]
    DimensionMismatch {
        field: &'static str,
        expected: String,
        found: String,
    },

    #[error("non-finite entry in `{field}`")]
    NonFinite { field: &'static str },

    #[error("horizon must be positive, got {0}")]
    NonPositiveHorizon(f64),

    #[error("grid must have at least one interval")]
    EmptyGrid,

    #[error("budget alpha[{index}] = {value} must satisfy 0 < alpha <= T = {horizon}")]
    InvalidAlpha {
        index: usize,
        value: f64,
        horizon: f64,
    },

    #[error("beta must be an integer in 1..={p}, got {value}")]
    InvalidBeta { value: f64, p: usize },

    #[error("schedule entry ({node}, {interval}) = {value} outside [0, 1]")]
    OutOfBox {
        node: usize,
        interval: usize,
        value: f64,
    },

    #[error("L0/l0 feasibility requested for a non-binary schedule")]
    ModeMismatch,

    #[error("schedule grid (T = {schedule_horizon}) does not match system horizon T = {system_horizon}")]
    GridMismatch {
        schedule_horizon: f64,
        system_horizon: f64,
    },

    #[error("matrix is not symmetric: asymmetry {asymmetry:e} exceeds tolerance {tolerance:e}")]
    Asymmetric { asymmetry: f64, tolerance: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error(
        "gramian is numerically singular (lambda_min = {min_eig:e}, lambda_max = {max_eig:e}); \
         hard-to-reach direction {direction:?}"
    )]
    SingularGramian {
        min_eig: f64,
        max_eig: f64,
        direction: Vec<f64>,
    },

    #[error("instance too large for enumeration: p*N = {entries} exceeds cap {cap}")]
    InstanceTooLarge { entries: usize, cap: usize },

    #[error("schedule infeasible for the relaxed problem (worst violation {violation:e})")]
    Infeasible { violation: f64 },

    #[error("invalid option: {0}")]
    InvalidOption(String),

    #[error("linear solve failed: matrix is singular")]
    SingularSolve,
}

pub type Result<T> = core::result::Result<T, Error>;
