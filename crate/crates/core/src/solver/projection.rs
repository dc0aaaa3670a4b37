//! Euclidean projection onto the relaxed feasible set
//! `{v in [0,1]^{p x N} : sum_k v_jk <= c_j, sum_j v_jk <= beta}`.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

const MAX_CYCLES: usize = 200_000;
const CHANGE_TOL: f64 = 1e-13;
const FEASIBILITY_TOL: f64 = 1e-10;
const MAX_NEWTON: usize = 200;
const NEWTON_RIDGE: f64 = 1e-12;
const DUAL_TOL: f64 = 1e-13;
const LINE_STEPS: usize = 60;

/// Entries strictly inside the box, and intervals whose cap binds.
struct FreePattern {
    entries: Vec<bool>,
    capped: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct FeasibleSet {
    /// Row caps in interval units, `alpha_j / dt`.
    pub row_caps: Vec<f64>,
    pub beta: f64,
}

impl FeasibleSet {
    pub fn violation(&self, v: &DMatrix<f64>) -> f64 {
        let mut worst = 0.0_f64;
        for (j, row) in v.row_iter().enumerate() {
            worst = worst.max(row.sum() - self.row_caps[j]);
        }
        for col in v.column_iter() {
            worst = worst.max(col.sum() - self.beta);
        }
        for &x in v.iter() {
            worst = worst.max(-x).max(x - 1.0);
        }
        worst.max(0.0)
    }

    fn project_rows(&self, v: &mut DMatrix<f64>) {
        let mut buf = Vec::with_capacity(v.ncols());
        for j in 0..v.nrows() {
            buf.clear();
            buf.extend(v.row(j).iter().copied());
            capped_simplex(&mut buf, self.row_caps[j]);
            for (k, &x) in buf.iter().enumerate() {
                v[(j, k)] = x;
            }
        }
    }

    fn project_cols(&self, v: &mut DMatrix<f64>) {
        for mut col in v.column_iter_mut() {
            capped_simplex(col.as_mut_slice(), self.beta);
        }
    }

    /// Shrinks over-budget rows, then columns, so the result is feasible to
    /// roundoff; only ever decreases entries.
    fn restore(&self, v: &mut DMatrix<f64>) {
        for j in 0..v.nrows() {
            let sum = v.row(j).sum();
            if sum > self.row_caps[j] && sum > 0.0 {
                v.row_mut(j).scale_mut(self.row_caps[j] / sum);
            }
        }
        for k in 0..v.ncols() {
            let sum = v.column(k).sum();
            if sum > self.beta && sum > 0.0 {
                v.column_mut(k).scale_mut(self.beta / sum);
            }
        }
    }

    /// Projects `y`; returns the projection and the number of iterations.
    ///
    /// Solves the dual in the row multipliers `lambda >= 0` by projected
    /// semismooth Newton steps. For fixed `lambda` the primal splits into
    /// per-interval capped-simplex projections of `y_k - lambda`, so the
    /// dual is a concave, piecewise-quadratic function of `p` variables
    /// whose gradient is the row slack. Steps are chosen from the sign of
    /// the directional derivative, since dual values lose all precision
    /// once `|y|` is large. Falls back to [`FeasibleSet::project_dykstra`]
    /// if Newton stalls.
    pub fn project(&self, y: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
        let (p, n) = y.shape();
        let scale = 1.0 + self.row_caps.iter().fold(self.beta, |m, &c| m.max(c));
        let tol = DUAL_TOL * scale + 4.0 * f64::EPSILON * n as f64 * (1.0 + y.amax());
        let mut lambda = DVector::zeros(p);
        let (mut x, mut free) = self.primal(y, &lambda);

        for iter in 1..=MAX_NEWTON {
            let g = self.row_slack(&x);
            let residual = (0..p)
                .map(|j| if lambda[j] > 0.0 { g[j].abs() } else { g[j].max(0.0) })
                .fold(0.0_f64, f64::max);
            if residual <= tol {
                self.restore(&mut x);
                return (x, iter);
            }

            // free multipliers: positive ones and those about to enter
            let idx: Vec<usize> = (0..p).filter(|&j| lambda[j] > 0.0 || g[j] > 0.0).collect();
            let m = idx.len();
            let mut h = DMatrix::<f64>::zeros(m, m);
            let mut rhs = DVector::<f64>::zeros(m);
            for (a, &j) in idx.iter().enumerate() {
                rhs[a] = g[j];
            }
            // minus the generalized Hessian: sum over intervals of
            // I_F - (1/|F|) 1 1^T on the free rows F (the rank-one part only
            // where the interval cap binds)
            for k in 0..n {
                let rows: Vec<usize> = (0..m).filter(|&a| free.entries[idx[a] * n + k]).collect();
                if rows.is_empty() {
                    continue;
                }
                let count = (0..p).filter(|&j| free.entries[j * n + k]).count() as f64;
                for &a in &rows {
                    h[(a, a)] += 1.0;
                    if free.capped[k] {
                        for &b in &rows {
                            h[(a, b)] -= 1.0 / count;
                        }
                    }
                }
            }
            for a in 0..m {
                // rows with no free entries get a unit gradient step
                h[(a, a)] = if h[(a, a)] == 0.0 { 1.0 } else { h[(a, a)] + NEWTON_RIDGE * (1.0 + h[(a, a)]) };
            }
            let dir = h
                .clone()
                .cholesky()
                .map(|c| c.solve(&rhs))
                .or_else(|| h.lu().solve(&rhs))
                .filter(|d| d.dot(&rhs) > 0.0)
                .unwrap_or(rhs);
            // multipliers at zero may not move down
            let mut d = DVector::zeros(p);
            for (a, &j) in idx.iter().enumerate() {
                d[j] = if lambda[j] > 0.0 { dir[a] } else { dir[a].max(0.0) };
            }
            let ascent: f64 = (0..p).map(|j| d[j] * g[j]).sum();
            if !(ascent > 0.0) {
                d = DVector::from_fn(p, |j, _| if lambda[j] > 0.0 { g[j] } else { g[j].max(0.0) });
            }

            let Some((trial, tx, tf)) = self.line_search(y, &lambda, &d) else {
                break;
            };
            (lambda, x, free) = (trial, tx, tf);
        }
        self.project_dykstra(y)
    }

    /// Step along `d` from `lambda` up to the nonnegativity bound. The unit
    /// step is doubled while the dual still ascends, and an overshoot is
    /// pulled back to the sign change of the directional derivative by
    /// regula falsi (the derivative is piecewise linear along the ray).
    #[allow(clippy::type_complexity)]
    fn line_search(
        &self,
        y: &DMatrix<f64>,
        lambda: &DVector<f64>,
        d: &DVector<f64>,
    ) -> Option<(DVector<f64>, DMatrix<f64>, FreePattern)> {
        let mut bound = f64::INFINITY;
        for j in 0..d.len() {
            if d[j] < 0.0 {
                bound = bound.min(lambda[j] / -d[j]);
            }
        }
        let at = |t: f64| {
            let trial = DVector::from_fn(d.len(), |j, _| (lambda[j] + t * d[j]).max(0.0));
            let (x, free) = self.primal(y, &trial);
            let slope: f64 = self.row_slack(&x).iter().zip(d.iter()).map(|(g, dj)| g * dj).sum();
            (trial, x, free, slope)
        };
        let start = self.row_slack(&self.primal(y, lambda).0).iter().zip(d.iter()).map(|(g, dj)| g * dj).sum::<f64>();

        let mut good = (0.0, start, None);
        let mut t = bound.min(1.0);
        let mut bad = None;
        for _ in 0..LINE_STEPS {
            let (trial, x, free, slope) = at(t);
            if slope < 0.0 {
                bad = Some((t, slope));
                break;
            }
            good = (t, slope, Some((trial, x, free)));
            if t >= bound || slope == 0.0 {
                break;
            }
            t = bound.min(2.0 * t);
        }

        if let Some((mut hi, mut f_hi)) = bad {
            let (mut lo, mut f_lo) = (good.0, good.1);
            let mut side = 0;
            for _ in 0..LINE_STEPS {
                if hi - lo <= f64::EPSILON * hi {
                    break;
                }
                let mid = (lo + (hi - lo) * f_lo / (f_lo - f_hi)).clamp(lo, hi);
                let mid = if mid <= lo || mid >= hi { 0.5 * (lo + hi) } else { mid };
                let (trial, x, free, slope) = at(mid);
                if slope >= 0.0 {
                    (lo, f_lo) = (mid, slope);
                    good = (mid, slope, Some((trial, x, free)));
                    if slope <= 1e-12 * start {
                        break;
                    }
                    // Illinois: halve the stale endpoint's weight
                    if side == 1 {
                        f_hi *= 0.5;
                    }
                    side = 1;
                } else {
                    (hi, f_hi) = (mid, slope);
                    if side == -1 {
                        f_lo *= 0.5;
                    }
                    side = -1;
                }
            }
        }
        let (t, _, found) = good;
        if t <= 0.0 {
            return None;
        }
        found.filter(|(trial, _, _)| trial != lambda)
    }

    /// Primal minimizer for fixed row multipliers, with its free pattern.
    fn primal(&self, y: &DMatrix<f64>, lambda: &DVector<f64>) -> (DMatrix<f64>, FreePattern) {
        let (p, n) = y.shape();
        let mut x = y.clone();
        let mut capped = vec![false; n];
        for (k, mut col) in x.column_iter_mut().enumerate() {
            for j in 0..p {
                col[j] -= lambda[j];
            }
            let inside: f64 = col.iter().map(|v| v.clamp(0.0, 1.0)).sum();
            capped[k] = inside > self.beta;
            capped_simplex(col.as_mut_slice(), self.beta);
        }
        let mut entries = vec![false; p * n];
        for j in 0..p {
            for k in 0..n {
                entries[j * n + k] = x[(j, k)] > 0.0 && x[(j, k)] < 1.0;
            }
        }
        (x, FreePattern { entries, capped })
    }

    fn row_slack(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows()).map(|j| x.row(j).sum() - self.row_caps[j]).collect()
    }

    /// Dykstra's alternating projections between the row family and the
    /// column family; returns the projection and the number of cycles.
    pub fn project_dykstra(&self, y: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
        let (p, n) = y.shape();
        let mut x = y.clone();
        let mut inc_rows = DMatrix::zeros(p, n);
        let mut inc_cols = DMatrix::zeros(p, n);
        let mut cycles = 0;
        while cycles < MAX_CYCLES {
            cycles += 1;
            let start = x.clone();

            let mut z = &x + &inc_rows;
            x.copy_from(&z);
            self.project_rows(&mut x);
            z -= &x;
            // the iterate can stall for a cycle while the corrections move
            let mut change = (&z - &inc_rows).amax();
            inc_rows = z;

            let mut z = &x + &inc_cols;
            x.copy_from(&z);
            self.project_cols(&mut x);
            z -= &x;
            change = change.max((&z - &inc_cols).amax());
            inc_cols = z;

            change = change.max((&x - &start).amax());
            if change <= CHANGE_TOL && self.violation(&x) <= FEASIBILITY_TOL {
                break;
            }
        }
        self.restore(&mut x);
        (x, cycles)
    }
}

/// In-place projection onto `{x in [0,1]^m : sum x <= cap}`: the box clamp
/// when it already fits, otherwise `clamp(y - tau)` with the shift `tau > 0`
/// solving `sum clamp(y_i - tau, 0, 1) = cap`. The clamped sum is piecewise
/// linear in `tau` with breakpoints `y_i - 1` and `y_i`, so a sweep over the
/// sorted breakpoints finds the shift exactly.
pub fn capped_simplex(y: &mut [f64], cap: f64) {
    let clamped_sum: f64 = y.iter().map(|v| v.clamp(0.0, 1.0)).sum();
    if clamped_sum <= cap {
        y.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        return;
    }
    // (position, change in the number of entries strictly between clips)
    let mut events: Vec<(f64, i32)> = y.iter().flat_map(|&v| [(v - 1.0, 1), (v, -1)]).collect();
    events.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
    let (mut tau, mut sum, mut free) = (events[0].0, y.len() as f64, 0i32);
    for &(at, change) in &events {
        let next = sum - free as f64 * (at - tau);
        if next <= cap && free > 0 {
            tau += (sum - cap) / free as f64;
            break;
        }
        (tau, sum) = (at, next);
        free += change;
    }
    y.iter_mut().for_each(|v| *v = (*v - tau).clamp(0.0, 1.0));
}
