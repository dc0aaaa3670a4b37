//! Exact propagation of the controllability Lyapunov differential equation
//! `G' = A G + G A^T + B V B^T`, `G(0) = 0`, over piecewise-constant
//! schedules, plus the direct Gramian integral and minimum control energy.

use alloc::format;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, expm, sym_eigen, symmetrize};
use crate::model::{LtiSystem, Schedule, TimeGrid};

/// Relative eigenvalue floor below which a Gramian counts as singular.
pub const SINGULAR_GRAMIAN_RATIO: f64 = 1e-12;

/// `e^M` by scaling and squaring.
pub fn matrix_exponential(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    expm(m)
}

/// One-interval flow: `G_{k+1} = E G_k E^T + S`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepUpdate {
    /// `E = e^{A dt}`.
    pub transition: DMatrix<f64>,
    /// `S = int_0^dt e^{A tau} B diag(v) B^T e^{A^T tau} dtau`.
    pub injection: DMatrix<f64>,
}

/// Computes the exact one-step flow for constant activation `v_k` through
/// the exponential of the block matrix `[[-A, Q], [0, A^T]] dt` with
/// `Q = B diag(v_k) B^T`.
pub fn step_update(sys: &LtiSystem, v_k: &[f64], dt: f64) -> Result<StepUpdate> {
    if v_k.len() != sys.nodes() {
        return Err(Error::DimensionMismatch {
            field: "v_k",
            expected: format!("{} entries", sys.nodes()),
            found: format!("{} entries", v_k.len()),
        });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidOption(format!("step dt must be positive, got {dt}")));
    }
    let n = sys.states();
    let q = sys.weighted_injection(v_k);
    let mut block = DMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&(-sys.a()));
    block.view_mut((0, n), (n, n)).copy_from(&q);
    block.view_mut((n, n), (n, n)).copy_from(&sys.a().transpose());
    let flow = expm(&(block * dt))?;
    let upper_right = flow.view((0, n), (n, n));
    let lower_right = flow.view((n, n), (n, n));
    // lower_right = e^{A^T dt}
    let transition = lower_right.transpose();
    let mut injection = &transition * upper_right;
    symmetrize(&mut injection);
    Ok(StepUpdate {
        transition,
        injection,
    })
}

/// Per-grid step data, exploiting that the injection term is linear in `v`:
/// `S(v) = sum_j v_j S_j` with `S_j` the single-node injection.
#[derive(Debug, Clone)]
pub struct StepTable {
    transition: DMatrix<f64>,
    node_injections: Vec<DMatrix<f64>>,
    grid: TimeGrid,
}

impl StepTable {
    pub fn new(sys: &LtiSystem, grid: &TimeGrid) -> Result<Self> {
        if !grid.matches_horizon(sys.horizon()) {
            return Err(Error::GridMismatch {
                schedule_horizon: grid.horizon(),
                system_horizon: sys.horizon(),
            });
        }
        let p = sys.nodes();
        let dt = grid.dt();
        let transition = expm(&(sys.a() * dt))?;
        let mut node_injections = Vec::with_capacity(p);
        let mut unit = alloc::vec![0.0; p];
        for j in 0..p {
            unit[j] = 1.0;
            node_injections.push(step_update(sys, &unit, dt)?.injection);
            unit[j] = 0.0;
        }
        Ok(Self {
            transition,
            node_injections,
            grid: *grid,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    /// Single-node injection `S_j`.
    pub fn node_injection(&self, j: usize) -> &DMatrix<f64> {
        &self.node_injections[j]
    }

    pub fn nodes(&self) -> usize {
        self.node_injections.len()
    }

    /// Advances `g` by one interval with activation `v`.
    pub fn advance(&self, g: &DMatrix<f64>, v: impl IntoIterator<Item = f64>) -> DMatrix<f64> {
        let mut next = &self.transition * g * self.transition.transpose();
        for (s, vj) in self.node_injections.iter().zip(v) {
            if vj != 0.0 {
                next += s * vj;
            }
        }
        symmetrize(&mut next);
        next
    }

    fn check(&self, sch: &Schedule) -> Result<()> {
        if !self.grid.matches(sch.grid()) {
            return Err(Error::GridMismatch {
                schedule_horizon: sch.grid().horizon(),
                system_horizon: self.grid.horizon(),
            });
        }
        if sch.nodes() != self.nodes() {
            return Err(Error::DimensionMismatch {
                field: "schedule",
                expected: format!("{} rows", self.nodes()),
                found: format!("{} rows", sch.nodes()),
            });
        }
        Ok(())
    }

    pub fn trajectory(&self, sch: &Schedule) -> Result<GramianTrajectory> {
        self.check(sch)?;
        let n = self.transition.nrows();
        let mut states = Vec::with_capacity(sch.intervals() + 1);
        let mut g = DMatrix::zeros(n, n);
        states.push(g.clone());
        for k in 0..sch.intervals() {
            g = self.advance(&g, sch.values().column(k).iter().copied());
            states.push(g.clone());
        }
        Ok(GramianTrajectory {
            states,
            grid: *sch.grid(),
        })
    }

    /// `G_c(T)` without storing intermediate states.
    pub fn terminal(&self, sch: &Schedule) -> Result<DMatrix<f64>> {
        self.check(sch)?;
        Ok(self.terminal_of(sch.values()))
    }

    /// `G_c(T)` for a raw `p x N` value matrix on this table's grid.
    pub fn terminal_of(&self, values: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.transition.nrows();
        let mut g = DMatrix::zeros(n, n);
        for k in 0..values.ncols() {
            g = self.advance(&g, values.column(k).iter().copied());
        }
        g
    }
}

/// `G_c(t_k)` at every grid point `k = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramianTrajectory {
    pub states: Vec<DMatrix<f64>>,
    pub grid: TimeGrid,
}

impl GramianTrajectory {
    /// `G_c(T)`.
    pub fn terminal(&self) -> &DMatrix<f64> {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn into_terminal(mut self) -> DMatrix<f64> {
        self.states.pop().expect("trajectory has at least one state")
    }
}

/// Propagates the Lyapunov flow across the schedule's grid.
pub fn propagate(sys: &LtiSystem, sch: &Schedule) -> Result<GramianTrajectory> {
    check_schedule(sys, sch)?;
    StepTable::new(sys, sch.grid())?.trajectory(sch)
}

fn check_schedule(sys: &LtiSystem, sch: &Schedule) -> Result<()> {
    if !sch.grid().matches_horizon(sys.horizon()) {
        return Err(Error::GridMismatch {
            schedule_horizon: sch.grid().horizon(),
            system_horizon: sys.horizon(),
        });
    }
    if sch.nodes() != sys.nodes() {
        return Err(Error::DimensionMismatch {
            field: "schedule",
            expected: format!("{} rows", sys.nodes()),
            found: format!("{} rows", sch.nodes()),
        });
    }
    Ok(())
}

/// Evaluates `G_c = int_0^T e^{A(T-tau)} B V(tau) B^T e^{A^T(T-tau)} dtau`
/// directly as a sum of per-interval integrals, each conjugated by
/// `e^{A(T - t_{k+1})}`.
pub fn gramian_quadrature(sys: &LtiSystem, sch: &Schedule) -> Result<DMatrix<f64>> {
    check_schedule(sys, sch)?;
    let grid = sch.grid();
    let n = sys.states();
    let mut g = DMatrix::zeros(n, n);
    for k in 0..grid.intervals() {
        let v = sch.interval_values(k);
        if v.iter().all(|&x| x == 0.0) {
            continue;
        }
        let local = step_update(sys, &v, grid.dt())?.injection;
        let remaining = grid.horizon() - grid.point(k + 1);
        let carry = expm(&(sys.a() * remaining))?;
        g += &carry * local * carry.transpose();
    }
    symmetrize(&mut g);
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinEnergy {
    /// `x_f^T G^{-1} x_f`.
    pub energy: f64,
    /// `lambda_max / lambda_min` of the Gramian.
    pub condition: f64,
}

/// Minimum input energy steering `0` to `x_f` over the horizon.
pub fn min_energy(g: &DMatrix<f64>, x_f: &DVector<f64>) -> Result<MinEnergy> {
    let n = g.nrows();
    if !g.is_square() || x_f.len() != n {
        return Err(Error::DimensionMismatch {
            field: "x_f",
            expected: format!("{n} entries"),
            found: format!("{} entries", x_f.len()),
        });
    }
    let scale = g.norm();
    let asym = asymmetry(g);
    if asym > 1e-10 * scale {
        return Err(Error::Asymmetric {
            asymmetry: asym,
            tolerance: 1e-10 * scale,
        });
    }
    let (values, vectors) = sym_eigen(g);
    let min_eig = values[0];
    let max_eig = values[n - 1];
    if max_eig <= 0.0 || min_eig <= SINGULAR_GRAMIAN_RATIO * max_eig {
        return Err(Error::SingularGramian {
            min_eig,
            max_eig,
            direction: vectors.column(0).iter().copied().collect(),
        });
    }
    let chol = g.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let y = chol.solve(x_f);
    Ok(MinEnergy {
        energy: x_f.dot(&y),
        condition: max_eig / min_eig,
    })
}
