//! Adjoint flow of the Lyapunov dynamics and the node switching functions
//!
//! ```text
//! q_j(t) = b_j^T e^{A^T (T - t)} dK/dG e^{A (T - t)} b_j
//! ```
//!
//! together with the non-constancy check on `q` and a numerical verifier of
//! the first-order optimality conditions (adjoint equation, transversality,
//! pointwise maximum condition, complementary slackness) for a candidate
//! schedule.

use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gramian::StepTable;
use crate::linalg::{expm, symmetrize};
use crate::metrics::MetricSpec;
use crate::model::{norms, Budgets, LtiSystem, Schedule, TimeGrid};

/// Default relative tolerance of the non-constancy check.
pub const DEFAULT_ASSUMPTION_TOL: f64 = 1e-9;

/// `q_j` sampled at the midpoint of every interval.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingProfile {
    /// `p x N`, entry `(j, k)` is `q_j` at the midpoint of interval `k`.
    pub q: DMatrix<f64>,
    /// The metric gradient the profile was built from.
    pub grad: DMatrix<f64>,
    pub grid: TimeGrid,
}

impl SwitchingProfile {
    pub fn nodes(&self) -> usize {
        self.q.nrows()
    }

    pub fn max_abs(&self) -> f64 {
        self.q.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Exponentials `e^{A (T - t)}` at interval midpoints and grid points, and
/// the per-node step injections, for one system on one grid.
#[derive(Debug, Clone)]
pub struct AdjointTable {
    b: DMatrix<f64>,
    grid: TimeGrid,
    steps: StepTable,
    /// `e^{A (T - t_k^mid)}`, `k = 0..N`.
    mid_flows: Vec<DMatrix<f64>>,
    /// `e^{A (T - t_k)}`, `k = 0..=N`.
    point_flows: Vec<DMatrix<f64>>,
}

impl AdjointTable {
    pub fn new(sys: &LtiSystem, grid: &TimeGrid) -> Result<Self> {
        let steps = StepTable::new(sys, grid)?;
        let t = grid.horizon();
        let mid_flows = (0..grid.intervals())
            .map(|k| expm(&(sys.a() * (t - grid.midpoint(k)))))
            .collect::<Result<Vec<_>>>()?;
        let point_flows = (0..=grid.intervals())
            .map(|k| expm(&(sys.a() * (t - grid.point(k)))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            b: sys.b().clone(),
            grid: *grid,
            steps,
            mid_flows,
            point_flows,
        })
    }

    pub fn steps(&self) -> &StepTable {
        &self.steps
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// `e^{A (T - t_k)}`.
    pub fn point_flow(&self, k: usize) -> &DMatrix<f64> {
        &self.point_flows[k]
    }

    /// Midpoint samples of `q_j`.
    pub fn switching(&self, grad: &DMatrix<f64>) -> SwitchingProfile {
        let p = self.b.ncols();
        let mut q = DMatrix::zeros(p, self.grid.intervals());
        for (k, flow) in self.mid_flows.iter().enumerate() {
            // e^{A s} b_j for every j at once
            let moved = flow * &self.b;
            let weighted = grad * &moved;
            for j in 0..p {
                q[(j, k)] = moved.column(j).dot(&weighted.column(j));
            }
        }
        SwitchingProfile {
            q,
            grad: grad.clone(),
            grid: self.grid,
        }
    }

    /// Exact partial derivatives `dJ/dv_jk` of the gridded objective:
    /// `< grad, e^{A(T - t_{k+1})} S_j e^{A^T(T - t_{k+1})} >`, which equals
    /// the integral of `q_j` over interval `k`.
    pub fn sensitivities(&self, grad: &DMatrix<f64>) -> DMatrix<f64> {
        let p = self.b.ncols();
        let n = self.grid.intervals();
        let mut out = DMatrix::zeros(p, n);
        for k in 0..n {
            let flow = &self.point_flows[k + 1];
            let pulled = flow.transpose() * grad * flow;
            for j in 0..p {
                out[(j, k)] = pulled.dot(self.steps.node_injection(j));
            }
        }
        out
    }

    /// Interval averages of `q_j`: [`Self::sensitivities`] divided by `dt`.
    pub fn interval_switching(&self, grad: &DMatrix<f64>) -> DMatrix<f64> {
        self.sensitivities(grad) / self.grid.dt()
    }

    /// `P^{11}(t_k) = e^{A^T (T - t_k)} grad e^{A (T - t_k)}`.
    pub fn adjoint_state(&self, grad: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
        let flow = &self.point_flows[k];
        let mut p = flow.transpose() * grad * flow;
        symmetrize(&mut p);
        p
    }
}

/// Samples `q_j` at the interval midpoints of `grid`.
pub fn switching_functions(
    sys: &LtiSystem,
    grad: &DMatrix<f64>,
    grid: &TimeGrid,
) -> Result<SwitchingProfile> {
    let n = sys.states();
    if grad.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            field: "gradK",
            expected: alloc::format!("{n}x{n}"),
            found: alloc::format!("{}x{}", grad.nrows(), grad.ncols()),
        });
    }
    Ok(AdjointTable::new(sys, grid)?.switching(grad))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PairRange {
    pub i: usize,
    pub j: usize,
    /// `max_k (q_i - q_j) - min_k (q_i - q_j)`.
    pub range: f64,
}

/// Outcome of the check that no `q_j` and no difference `q_i - q_j` is
/// constant over the horizon.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AssumptionReport {
    pub node_ranges: Vec<f64>,
    pub pair_ranges: Vec<PairRange>,
    pub constant_nodes: Vec<usize>,
    pub constant_pairs: Vec<(usize, usize)>,
    /// Absolute threshold actually applied: `tol * (1 + max |q|)`.
    pub threshold: f64,
    pub pass: bool,
}

fn range<I: Iterator<Item = f64>>(values: I) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        (lo.min(x), hi.max(x))
    });
    if hi >= lo {
        hi - lo
    } else {
        0.0
    }
}

pub fn check_assumption(profile: &SwitchingProfile, tol: f64) -> AssumptionReport {
    let q = &profile.q;
    let p = q.nrows();
    let threshold = tol * (1.0 + profile.max_abs());

    let node_ranges: Vec<f64> = (0..p).map(|j| range(q.row(j).iter().copied())).collect();
    let constant_nodes: Vec<usize> = node_ranges
        .iter()
        .enumerate()
        .filter(|(_, &r)| r <= threshold)
        .map(|(j, _)| j)
        .collect();

    let mut pair_ranges = Vec::new();
    let mut constant_pairs = Vec::new();
    for i in 0..p {
        for j in (i + 1)..p {
            let r = range(q.row(i).iter().zip(q.row(j).iter()).map(|(a, b)| a - b));
            if r <= threshold {
                constant_pairs.push((i, j));
            }
            pair_ranges.push(PairRange { i, j, range: r });
        }
    }
    let pass = constant_nodes.is_empty() && constant_pairs.is_empty();
    AssumptionReport {
        node_ranges,
        pair_ranges,
        constant_nodes,
        constant_pairs,
        threshold,
        pass,
    }
}

/// Residuals of the first-order optimality conditions at a candidate
/// schedule, with normal multiplier and `P^{22}_jj(T) = -theta_j`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PmpResiduals {
    /// `max_k || P(t_k) - e^{A^T dt} P(t_{k+1}) e^{A dt} ||_F`.
    pub adjoint_residual: f64,
    /// Mismatch between `P^{11}(T)` reached by the adjoint flow and
    /// `dK/dG`, combined with any sign violation `theta_j < 0`.
    pub transversality_residual: f64,
    /// Largest pointwise Hamiltonian shortfall of the schedule versus the
    /// best activation in `{v in [0,1]^p : sum v <= beta}`.
    pub maximum_condition_gap: f64,
    /// `|theta_j (alpha_j - ||v_j||_L1)|` per node.
    pub complementary_slackness: Vec<f64>,
    pub complementary_slackness_residual: f64,
    /// Frobenius norm of `dK/dG`, for scaling the residuals.
    pub gradient_norm: f64,
}

impl PmpResiduals {
    pub fn max_residual(&self) -> f64 {
        self.adjoint_residual
            .max(self.transversality_residual)
            .max(self.maximum_condition_gap)
            .max(self.complementary_slackness_residual)
    }
}

/// Best value of `sum_j c_j v_j` over `v in [0,1]^p, sum_j v_j <= beta`:
/// the sum of the `beta` largest positive coefficients.
pub fn pointwise_hamiltonian_max(coeffs: &[f64], beta: usize) -> f64 {
    let mut positive: Vec<f64> = coeffs.iter().copied().filter(|&c| c > 0.0).collect();
    positive.sort_by(|a, b| b.total_cmp(a));
    positive.iter().take(beta).sum()
}

/// Evaluates the optimality residuals of `sch` for the given thresholds.
///
/// The pointwise maximum condition uses interval averages of `q_j`, the
/// exact Hamiltonian coefficients of the gridded problem.
pub fn verify_pmp(
    sys: &LtiSystem,
    metric: &MetricSpec,
    bud: &Budgets,
    sch: &Schedule,
    thresholds: &[f64],
) -> Result<PmpResiduals> {
    let table = AdjointTable::new(sys, sch.grid())?;
    verify_pmp_with(&table, metric, bud, sch, thresholds)
}

/// [`verify_pmp`] reusing a prebuilt table.
pub fn verify_pmp_with(
    table: &AdjointTable,
    metric: &MetricSpec,
    bud: &Budgets,
    sch: &Schedule,
    thresholds: &[f64],
) -> Result<PmpResiduals> {
    let p = sch.nodes();
    if thresholds.len() != p || bud.alpha.len() != p {
        return Err(Error::DimensionMismatch {
            field: "thresholds",
            expected: alloc::format!("{p} entries"),
            found: alloc::format!("{} entries", thresholds.len()),
        });
    }
    let grid = table.grid();
    let g_final = table.steps().terminal(sch)?;
    let grad = metric.gradient(&g_final)?.matrix;
    let n_int = grid.intervals();

    // adjoint equation: exact one-interval flow between consecutive samples
    let e = table.steps().transition();
    let adjoint: Vec<DMatrix<f64>> = (0..=n_int).map(|k| table.adjoint_state(&grad, k)).collect();
    let mut adjoint_residual = 0.0_f64;
    for k in 0..n_int {
        let carried = e.transpose() * &adjoint[k + 1] * e;
        adjoint_residual = adjoint_residual.max((&adjoint[k] - carried).norm());
    }

    // transversality: carry P(t_0) forward to T with the inverse step flow
    let e_inv = e
        .clone()
        .try_inverse()
        .ok_or(Error::SingularSolve)?;
    let mut carried = adjoint[0].clone();
    for _ in 0..n_int {
        carried = e_inv.transpose() * carried * &e_inv;
    }
    let sign_violation = thresholds.iter().fold(0.0_f64, |m, &t| m.max(-t));
    let transversality_residual = (carried - &grad).norm().max(sign_violation);

    // pointwise maximum condition
    let averaged = table.interval_switching(&grad);
    let mut maximum_condition_gap = 0.0_f64;
    let mut coeffs = alloc::vec![0.0; p];
    for k in 0..n_int {
        let mut achieved = 0.0;
        for j in 0..p {
            coeffs[j] = averaged[(j, k)] - thresholds[j];
            achieved += coeffs[j] * sch.get(j, k);
        }
        let best = pointwise_hamiltonian_max(&coeffs, bud.beta);
        maximum_condition_gap = maximum_condition_gap.max((best - achieved).max(0.0));
    }

    let rows = norms(sch).row_l1;
    let complementary_slackness: Vec<f64> = thresholds
        .iter()
        .zip(&bud.alpha)
        .zip(&rows)
        .map(|((&theta, &alpha), &used)| (theta * (alpha - used)).abs())
        .collect();
    let complementary_slackness_residual =
        complementary_slackness.iter().fold(0.0_f64, |m, &x| m.max(x));

    Ok(PmpResiduals {
        adjoint_residual,
        transversality_residual,
        maximum_condition_gap,
        complementary_slackness,
        complementary_slackness_residual,
        gradient_norm: grad.norm(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;

    fn double_integrator() -> LtiSystem {
        LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn constant_profile_when_drift_is_zero() {
        let sys = LtiSystem::new(
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.5, -1.0]),
            1.0,
        )
        .unwrap();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let prof = switching_functions(&sys, &DMatrix::identity(2, 2), &grid).unwrap();
        for k in 0..4 {
            assert_relative_eq!(prof.q[(0, k)], 1.25, epsilon = 1e-14);
            assert_relative_eq!(prof.q[(1, k)], 5.0, epsilon = 1e-14);
        }
        let rep = check_assumption(&prof, DEFAULT_ASSUMPTION_TOL);
        assert!(!rep.pass);
        assert_eq!(rep.constant_nodes, vec![0, 1]);
        assert_eq!(rep.constant_pairs, vec![(0, 1)]);
    }

    #[test]
    fn double_integrator_profile() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let prof = switching_functions(&double_integrator(), &DMatrix::identity(2, 2), &grid).unwrap();
        assert_relative_eq!(prof.q[(0, 0)], 1.5625, epsilon = 1e-14);
        assert_relative_eq!(prof.q[(0, 1)], 1.0625, epsilon = 1e-14);
        assert!(check_assumption(&prof, 1e-9).pass);
    }

    #[test]
    fn duplicated_columns_flag_pair() {
        let sys = LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, -1.0, -0.2]),
            DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.5, 1.0, 0.5]),
            2.0,
        )
        .unwrap();
        let grid = TimeGrid::new(2.0, 8).unwrap();
        let prof = switching_functions(&sys, &DMatrix::identity(2, 2), &grid).unwrap();
        let rep = check_assumption(&prof, 1e-9);
        assert!(!rep.pass);
        assert_eq!(rep.constant_pairs, vec![(0, 2)]);
        assert!(rep.constant_nodes.is_empty());
    }

    #[test]
    fn sensitivities_average_the_switching_function() {
        // q(t) = (1 - t)^2 + 1 integrates exactly over each interval.
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let table = AdjointTable::new(&double_integrator(), &grid).unwrap();
        let avg = table.interval_switching(&DMatrix::identity(2, 2));
        for k in 0..4 {
            let (a, b) = (grid.point(k), grid.point(k + 1));
            let prim = |t: f64| -libm::pow(1.0 - t, 3.0) / 3.0 + t;
            let exact = (prim(b) - prim(a)) / grid.dt();
            assert_relative_eq!(avg[(0, k)], exact, max_relative = 1e-13);
        }
    }

    #[test]
    fn zero_schedule_violates_maximum_condition() {
        let sys = double_integrator();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let sch = Schedule::zeros(1, grid);
        let res = verify_pmp(&sys, &MetricSpec::trace(), &Budgets::new(vec![0.5], 1), &sch, &[0.0])
            .unwrap();
        assert!(res.maximum_condition_gap > 0.0);
        assert!(res.adjoint_residual < 1e-13);
        assert!(res.transversality_residual < 1e-12);
    }

    #[test]
    fn slack_budget_with_positive_threshold() {
        let sys = double_integrator();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let sch = Schedule::zeros(1, grid);
        let res = verify_pmp(&sys, &MetricSpec::trace(), &Budgets::new(vec![0.5], 1), &sch, &[0.3])
            .unwrap();
        assert_relative_eq!(res.complementary_slackness_residual, 0.15, epsilon = 1e-15);
    }

    #[test]
    fn negative_threshold_breaks_transversality() {
        let sys = double_integrator();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let sch = Schedule::ones(1, grid);
        let res = verify_pmp(&sys, &MetricSpec::trace(), &Budgets::new(vec![1.0], 1), &sch, &[-0.2])
            .unwrap();
        assert_relative_eq!(res.transversality_residual, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn hamiltonian_max_takes_top_beta_positive() {
        assert_eq!(pointwise_hamiltonian_max(&[3.0, -1.0, 2.0, 5.0], 2), 8.0);
        assert_eq!(pointwise_hamiltonian_max(&[-3.0, -1.0], 2), 0.0);
        assert_eq!(pointwise_hamiltonian_max(&[1.0, -1.0], 2), 1.0);
    }
}
