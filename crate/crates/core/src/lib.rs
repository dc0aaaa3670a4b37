//! Sparse node scheduling for controllability-Gramian maximization.
//!
//! A linear network `x' = A x + B V(t) u` may activate input node `j` for at
//! most `alpha_j` time units and at most `beta` nodes at once. This crate
//! maximizes a metric `K` of the controllability Gramian `G_c(T)` over such
//! activation schedules by solving the convex L1/l1 relaxation on a uniform
//! grid, and checks that the relaxed optimum is binary and matches the
//! combinatorial optimum found by exhaustive enumeration.
//!
//! The crate is `no_std` and needs only `alloc`.
//!
//! Module map:
//! - [`model`]: system, grid, budgets, schedules and feasibility checks.
//! - [`gramian`]: exact Lyapunov propagation, direct Gramian integral,
//!   minimum control energy.
//! - [`metrics`]: `trace`, `log_det` and `min_eig` metrics and gradients.
//! - [`adjoint`]: switching functions, the non-constancy check, optimality
//!   residuals.
//! - [`solver`]: projected gradient, bang-bang fixed point, rounding.
//! - [`oracle`]: brute-force enumeration of binary schedules.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod adjoint;
pub mod error;
pub mod gramian;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod solver;

pub use error::{Error, Result};
pub use nalgebra;

pub use adjoint::{
    check_assumption, switching_functions, verify_pmp, AdjointTable, AssumptionReport, PmpResiduals,
    SwitchingProfile,
};
pub use gramian::{gramian_quadrature, matrix_exponential, min_energy, propagate, step_update, GramianTrajectory, MinEnergy};
pub use metrics::{MetricKind, MetricSpec};
pub use model::{check_feasibility, norms, validate_system, Budgets, FeasibilityReport, LtiSystem, Schedule, SparsityMode, TimeGrid};
pub use oracle::{brute_force_binary, enumerate_feasible, OracleResult};
pub use solver::{
    discreteness_report, round_and_repair, solve, solve_fixed_point, solve_projected_gradient, Method, SolverOptions,
    SolverReport, StepSize,
};
