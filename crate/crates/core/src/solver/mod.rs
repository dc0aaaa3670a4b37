//! Solvers for the relaxed scheduling problem on a grid
//!
//! ```text
//! max_v  K(G_c(T))   s.t.  v in [0,1]^{p x N},
//!                          sum_k v_jk dt <= alpha_j,   sum_j v_jk <= beta
//! ```
//!
//! Two independent routes are provided: projected-gradient ascent over the
//! convex feasible set, and a fixed-point iteration on the bang-bang
//! selection rule driven by the switching functions.

mod fixed_point;
mod gradient;
pub mod projection;
mod rounding;
pub mod selection;

use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::adjoint::{check_assumption, verify_pmp_with, AdjointTable, AssumptionReport, PmpResiduals, DEFAULT_ASSUMPTION_TOL};
use crate::error::{Error, Result};
use crate::gramian::propagate;
use crate::metrics::MetricSpec;
use crate::model::{LtiSystem, Budgets, Schedule, TimeGrid};

pub use fixed_point::solve_fixed_point;
pub use gradient::solve_projected_gradient;
pub use rounding::round_and_repair;
pub use selection::{fit_thresholds, select, Selection, ThresholdFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Method {
    ProjectedGradient,
    FixedPoint,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::ProjectedGradient => "projected_gradient",
            Method::FixedPoint => "fixed_point",
        }
    }
}

/// Projected-gradient step policy.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StepSize {
    /// Try twice the last accepted step (1.0 at the start), halve until the
    /// objective increases.
    Adaptive,
    /// Constant step, still halved on non-increase.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolverOptions {
    pub method: Method,
    pub max_iters: usize,
    pub step_size: StepSize,
    /// Weight of the previous scores in the fixed-point iteration.
    pub damping: f64,
    pub convergence_tol: f64,
    pub threshold_bisection_tol: f64,
    pub seed: u64,
    /// Extra randomly initialized runs; the best objective is kept.
    pub restarts: usize,
    pub assumption_tol: f64,
    /// Distance to `{0, 1}` counted as binary in the report.
    pub discreteness_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: Method::ProjectedGradient,
            max_iters: 500,
            step_size: StepSize::Adaptive,
            damping: 0.5,
            convergence_tol: 1e-9,
            threshold_bisection_tol: 1e-10,
            seed: 0,
            restarts: 0,
            assumption_tol: DEFAULT_ASSUMPTION_TOL,
            discreteness_tol: 1e-3,
        }
    }
}

impl SolverOptions {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.convergence_tol) || !positive(self.threshold_bisection_tol) {
            return Err(Error::InvalidOption("tolerances must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidOption("damping must lie in [0, 1)".into()));
        }
        if let StepSize::Fixed(s) = self.step_size {
            if !positive(s) {
                return Err(Error::InvalidOption("step size must be positive".into()));
            }
        }
        if !(self.assumption_tol >= 0.0) || !(self.discreteness_tol >= 0.0) {
            return Err(Error::InvalidOption("assumption and discreteness tolerances must be nonnegative".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidOption("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub method: Method,
    pub objective: f64,
    pub schedule: Schedule,
    /// Per-node budget multipliers `theta_j >= 0`.
    pub thresholds: Vec<f64>,
    pub discreteness_fraction: f64,
    pub assumption: AssumptionReport,
    pub pmp: PmpResiduals,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// Intervals where the selection boundary was a tie (fixed point) or
    /// where the recovered selection was tied (projected gradient).
    pub ties: usize,
    /// `min_eig` evaluated at a repeated smallest eigenvalue.
    pub multiplicity_warning: bool,
}

/// Validated instance with the per-grid exponential tables.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    pub sys: &'a LtiSystem,
    pub metric: &'a MetricSpec,
    pub bud: &'a Budgets,
    pub grid: TimeGrid,
    table: AdjointTable,
}

impl<'a> Problem<'a> {
    pub fn new(sys: &'a LtiSystem, metric: &'a MetricSpec, bud: &'a Budgets, grid: &TimeGrid) -> Result<Self> {
        sys.validate()?;
        metric.validate()?;
        bud.validate(sys.nodes(), sys.horizon())?;
        let table = AdjointTable::new(sys, grid)?;
        Ok(Self {
            sys,
            metric,
            bud,
            grid: *grid,
            table,
        })
    }

    pub fn table(&self) -> &AdjointTable {
        &self.table
    }

    pub fn nodes(&self) -> usize {
        self.sys.nodes()
    }

    pub fn objective(&self, values: &DMatrix<f64>) -> Result<f64> {
        self.metric.evaluate(&self.table.steps().terminal_of(values))
    }

    /// Objective, metric gradient at `G_c(T)`, and its multiplicity flag.
    pub fn linearize(&self, values: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>, bool)> {
        let g = self.table.steps().terminal_of(values);
        let value = self.metric.evaluate(&g)?;
        let grad = self.metric.gradient(&g)?;
        Ok((value, grad.matrix, grad.multiplicity_warning))
    }

    pub fn feasible_set(&self) -> projection::FeasibleSet {
        let dt = self.grid.dt();
        projection::FeasibleSet {
            row_caps: self.bud.alpha.iter().map(|a| a / dt).collect(),
            beta: self.bud.beta as f64,
        }
    }

    pub fn schedule(&self, values: DMatrix<f64>) -> Result<Schedule> {
        Schedule::clamped(values, self.grid)
    }

    /// Assembles the report for a final schedule: the objective is
    /// recomputed from scratch, the switching profile is checked and the
    /// optimality residuals are evaluated at the given thresholds.
    pub(crate) fn finish(
        &self,
        method: Method,
        schedule: Schedule,
        thresholds: Vec<f64>,
        opts: &SolverOptions,
        run: RunStats,
    ) -> Result<SolverReport> {
        let traj = propagate(self.sys, &schedule)?;
        let g = traj.terminal();
        let objective = self.metric.evaluate(g)?;
        let grad = self.metric.gradient(g)?;
        let profile = self.table.switching(&grad.matrix);
        let assumption = check_assumption(&profile, opts.assumption_tol);
        let pmp = verify_pmp_with(&self.table, self.metric, self.bud, &schedule, &thresholds)?;
        Ok(SolverReport {
            method,
            objective,
            discreteness_fraction: discreteness_report(&schedule, opts.discreteness_tol),
            schedule,
            thresholds,
            assumption,
            pmp,
            iterations: run.iterations,
            objective_trace: run.trace,
            converged: run.converged,
            ties: run.ties,
            multiplicity_warning: grad.multiplicity_warning || run.multiplicity_warning,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct RunStats {
    pub iterations: usize,
    pub trace: Vec<f64>,
    pub converged: bool,
    pub ties: usize,
    pub multiplicity_warning: bool,
}

/// Runs the method selected in `opts`.
pub fn solve(
    sys: &LtiSystem,
    metric: &MetricSpec,
    bud: &Budgets,
    grid: &TimeGrid,
    opts: &SolverOptions,
) -> Result<SolverReport> {
    match opts.method {
        Method::ProjectedGradient => solve_projected_gradient(sys, metric, bud, grid, opts),
        Method::FixedPoint => solve_fixed_point(sys, metric, bud, grid, opts),
    }
}

/// Share of entries within `tol` of 0 or 1.
pub fn discreteness_report(sch: &Schedule, tol: f64) -> f64 {
    let v = sch.values();
    let close = v
        .iter()
        .filter(|&&x| x.abs() <= tol || (1.0 - x).abs() <= tol)
        .count();
    close as f64 / v.len() as f64
}
