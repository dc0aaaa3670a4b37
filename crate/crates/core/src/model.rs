//! Problem data: the linear network, the time grid, activation budgets and
//! schedules, plus budget feasibility checks.

use alloc::format;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::all_finite;

/// Default absolute tolerance for budget checks.
pub const DEFAULT_FEASIBILITY_TOL: f64 = 1e-9;

/// Roundoff allowance on budget comparisons, in units of `dt` for row
/// budgets and in units of one node for column caps.
const ROUNDOFF_SLACK: f64 = 1e-12;

/// `x' = A x + B V(t) u`, observed over `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    horizon: f64,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, horizon: f64) -> Result<Self> {
        let sys = Self { a, b, horizon };
        sys.validate()?;
        Ok(sys)
    }

    /// Checks shapes, finiteness and the horizon.
    pub fn validate(&self) -> Result<()> {
        let (ar, ac) = self.a.shape();
        if ar == 0 || ar != ac {
            return Err(Error::DimensionMismatch {
                field: "A",
                expected: "square n x n with n >= 1".into(),
                found: format!("{ar}x{ac}"),
            });
        }
        let (br, bc) = self.b.shape();
        if br != ar || bc == 0 {
            return Err(Error::DimensionMismatch {
                field: "B",
                expected: format!("{ar} x p with p >= 1"),
                found: format!("{br}x{bc}"),
            });
        }
        if !all_finite(&self.a) {
            return Err(Error::NonFinite { field: "A" });
        }
        if !all_finite(&self.b) {
            return Err(Error::NonFinite { field: "B" });
        }
        if !self.horizon.is_finite() {
            return Err(Error::NonFinite { field: "T" });
        }
        if self.horizon <= 0.0 {
            return Err(Error::NonPositiveHorizon(self.horizon));
        }
        Ok(())
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// State dimension n.
    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    /// Number of input nodes p.
    pub fn nodes(&self) -> usize {
        self.b.ncols()
    }

    /// Input direction `b_j`.
    pub fn input_column(&self, j: usize) -> DVector<f64> {
        self.b.column(j).into_owned()
    }

    /// `B diag(v) B^T`.
    pub fn weighted_injection(&self, v: &[f64]) -> DMatrix<f64> {
        let n = self.states();
        let mut q = DMatrix::zeros(n, n);
        for (j, &vj) in v.iter().enumerate() {
            if vj != 0.0 {
                let bj = self.b.column(j);
                q += (&bj * bj.transpose()) * vj;
            }
        }
        q
    }
}

/// Standalone form of [`LtiSystem::validate`].
pub fn validate_system(sys: &LtiSystem) -> Result<()> {
    sys.validate()
}

/// Uniform partition of `[0, T]` into `N` intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    intervals: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, intervals: usize) -> Result<Self> {
        if intervals == 0 {
            return Err(Error::EmptyGrid);
        }
        if !horizon.is_finite() {
            return Err(Error::NonFinite { field: "T" });
        }
        if horizon <= 0.0 {
            return Err(Error::NonPositiveHorizon(horizon));
        }
        Ok(Self {
            horizon,
            intervals,
            dt: horizon / intervals as f64,
        })
    }

    pub fn for_system(sys: &LtiSystem, intervals: usize) -> Result<Self> {
        Self::new(sys.horizon(), intervals)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Grid point `t_k`, `k = 0..=N`; `t_N` is exactly `T`.
    pub fn point(&self, k: usize) -> f64 {
        if k >= self.intervals {
            self.horizon
        } else {
            self.horizon * (k as f64) / (self.intervals as f64)
        }
    }

    /// Midpoint of interval `k`.
    pub fn midpoint(&self, k: usize) -> f64 {
        self.horizon * (k as f64 + 0.5) / (self.intervals as f64)
    }

    /// Whether `other` partitions the same horizon (to one ulp-scale
    /// relative tolerance) with the same interval count.
    pub fn matches(&self, other: &TimeGrid) -> bool {
        self.intervals == other.intervals
            && (self.horizon - other.horizon).abs() <= 4.0 * f64::EPSILON * self.horizon.abs()
    }

    pub fn matches_horizon(&self, horizon: f64) -> bool {
        (self.horizon - horizon).abs() <= 4.0 * f64::EPSILON * horizon.abs()
    }

    /// The same horizon split into `factor` times as many intervals.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        Self::new(self.horizon, self.intervals * factor)
    }
}

/// Per-node activation-time budgets and the simultaneity cap.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Budgets {
    pub alpha: Vec<f64>,
    pub beta: usize,
}

impl Budgets {
    pub fn new(alpha: Vec<f64>, beta: usize) -> Self {
        Self { alpha, beta }
    }

    /// Accepts `beta` as a real number and rejects non-integers instead of
    /// rounding them.
    pub fn with_real_beta(alpha: Vec<f64>, beta: f64) -> Result<Self> {
        if !beta.is_finite() || beta < 1.0 || libm::floor(beta) != beta {
            return Err(Error::InvalidBeta {
                value: beta,
                p: alpha.len(),
            });
        }
        Ok(Self {
            alpha,
            beta: beta as usize,
        })
    }

    pub fn validate(&self, nodes: usize, horizon: f64) -> Result<()> {
        if self.alpha.len() != nodes {
            return Err(Error::DimensionMismatch {
                field: "alpha",
                expected: format!("{nodes} entries"),
                found: format!("{} entries", self.alpha.len()),
            });
        }
        for (index, &value) in self.alpha.iter().enumerate() {
            if !(value > 0.0 && value <= horizon) {
                return Err(Error::InvalidAlpha {
                    index,
                    value,
                    horizon,
                });
            }
        }
        if self.beta < 1 || self.beta > nodes {
            return Err(Error::InvalidBeta {
                value: self.beta as f64,
                p: nodes,
            });
        }
        Ok(())
    }

    /// Largest number of active intervals node `j` may use on a grid of
    /// step `dt`: `floor(alpha_j / dt + 1e-12)`.
    pub fn max_active_intervals(&self, j: usize, dt: f64) -> usize {
        libm::floor(self.alpha[j] / dt + ROUNDOFF_SLACK) as usize
    }
}

/// Piecewise-constant activation `v_j` on the intervals of a grid, stored
/// as a `p x N` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    values: DMatrix<f64>,
    grid: TimeGrid,
}

impl Schedule {
    pub fn new(values: DMatrix<f64>, grid: TimeGrid) -> Result<Self> {
        if values.ncols() != grid.intervals() || values.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                field: "schedule",
                expected: format!("p x {}", grid.intervals()),
                found: format!("{}x{}", values.nrows(), values.ncols()),
            });
        }
        for ((node, interval), &value) in indexed(&values) {
            if !value.is_finite() {
                return Err(Error::NonFinite { field: "schedule" });
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::OutOfBox {
                    node,
                    interval,
                    value,
                });
            }
        }
        Ok(Self { values, grid })
    }

    /// Builds a schedule, clamping entries into `[0, 1]`.
    pub fn clamped(mut values: DMatrix<f64>, grid: TimeGrid) -> Result<Self> {
        values.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
        Self::new(values, grid)
    }

    pub fn zeros(nodes: usize, grid: TimeGrid) -> Self {
        Self {
            values: DMatrix::zeros(nodes, grid.intervals()),
            grid,
        }
    }

    pub fn ones(nodes: usize, grid: TimeGrid) -> Self {
        Self {
            values: DMatrix::from_element(nodes, grid.intervals(), 1.0),
            grid,
        }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn nodes(&self) -> usize {
        self.values.nrows()
    }

    pub fn intervals(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, node: usize, interval: usize) -> f64 {
        self.values[(node, interval)]
    }

    /// Column `k` as a plain vector.
    pub fn interval_values(&self, k: usize) -> Vec<f64> {
        self.values.column(k).iter().copied().collect()
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&x| x == 0.0 || x == 1.0)
    }

    /// Each interval split into `factor` equal copies.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        let grid = self.grid.refined(factor)?;
        let values = DMatrix::from_fn(self.nodes(), grid.intervals(), |j, k| {
            self.values[(j, k / factor)]
        });
        Ok(Self { values, grid })
    }
}

fn indexed(m: &DMatrix<f64>) -> impl Iterator<Item = ((usize, usize), &f64)> {
    let rows = m.nrows();
    m.iter().enumerate().map(move |(i, x)| ((i % rows, i / rows), x))
}

/// Which norm pair the budgets are read in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SparsityMode {
    /// Support measure per node and active count per instant; binary schedules only.
    L0,
    /// Integral per node and sum per instant.
    L1,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeasibilityReport {
    pub row_ok: Vec<bool>,
    pub col_ok: Vec<bool>,
    pub box_ok: bool,
    pub worst_violation: f64,
}

impl FeasibilityReport {
    pub fn feasible(&self) -> bool {
        self.box_ok && self.row_ok.iter().all(|&b| b) && self.col_ok.iter().all(|&b| b)
    }
}

fn excess(value: f64, cap: f64, slack: f64) -> f64 {
    if value <= cap + slack {
        0.0
    } else {
        value - cap
    }
}

/// Checks row (per-node time) and column (simultaneity) budgets.
///
/// For binary schedules the L0 and L1 sums coincide, so both modes share
/// the same arithmetic; L0 mode only adds the binary precondition.
pub fn check_feasibility(
    sch: &Schedule,
    bud: &Budgets,
    mode: SparsityMode,
    tol: f64,
) -> Result<FeasibilityReport> {
    if bud.alpha.len() != sch.nodes() {
        return Err(Error::DimensionMismatch {
            field: "alpha",
            expected: format!("{} entries", sch.nodes()),
            found: format!("{} entries", bud.alpha.len()),
        });
    }
    if mode == SparsityMode::L0 && !sch.is_binary() {
        return Err(Error::ModeMismatch);
    }
    let dt = sch.grid().dt();
    let norms = norms(sch);
    let mut worst = 0.0_f64;

    let row_ok = norms
        .row_l1
        .iter()
        .zip(&bud.alpha)
        .map(|(&row, &alpha)| {
            let e = excess(row, alpha, ROUNDOFF_SLACK * dt);
            worst = worst.max(e);
            e <= tol
        })
        .collect();
    let beta = bud.beta as f64;
    let col_ok = norms
        .col_l1
        .iter()
        .map(|&col| {
            let e = excess(col, beta, ROUNDOFF_SLACK);
            worst = worst.max(e);
            e <= tol
        })
        .collect();
    let box_excess = sch
        .values()
        .iter()
        .map(|&x| (-x).max(x - 1.0).max(0.0))
        .fold(0.0, f64::max);
    worst = worst.max(box_excess);

    Ok(FeasibilityReport {
        row_ok,
        col_ok,
        box_ok: box_excess <= tol,
        worst_violation: worst,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleNorms {
    /// `sum_k v_jk * dt` per node.
    pub row_l1: Vec<f64>,
    /// `sum_j v_jk` per interval.
    pub col_l1: Vec<f64>,
    /// Share of entries exactly equal to 0 or 1.
    pub binary_fraction: f64,
}

pub fn norms(sch: &Schedule) -> ScheduleNorms {
    let v = sch.values();
    let dt = sch.grid().dt();
    let row_l1 = v.row_iter().map(|r| r.sum() * dt).collect();
    let col_l1 = v.column_iter().map(|c| c.sum()).collect();
    let binary = v.iter().filter(|&&x| x == 0.0 || x == 1.0).count();
    ScheduleNorms {
        row_l1,
        col_l1,
        binary_fraction: binary as f64 / v.len() as f64,
    }
}
