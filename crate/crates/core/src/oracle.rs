//! Exhaustive search over binary schedules satisfying the L0/l0 budgets on
//! a small grid. Ground truth for the combinatorial problem.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gramian::StepTable;
use crate::metrics::MetricSpec;
use crate::model::{Budgets, LtiSystem, Schedule, TimeGrid};

/// Largest `p * N` the enumerator accepts.
pub const ENUMERATION_CAP: usize = 24;

/// Maximizers are collected within this absolute distance of the best value.
pub const MAXIMIZER_TOL: f64 = 1e-12;

fn check_size(p: usize, grid: &TimeGrid) -> Result<()> {
    let entries = p * grid.intervals();
    if entries > ENUMERATION_CAP {
        return Err(Error::InstanceTooLarge {
            entries,
            cap: ENUMERATION_CAP,
        });
    }
    Ok(())
}

/// Binary feasible schedules in column-major lexicographic order: the
/// schedule is read as the bit string `v_11, v_21, ..., v_p1, v_12, ...`
/// and strings are produced in increasing order.
#[derive(Debug, Clone)]
pub struct FeasibleSchedules {
    grid: TimeGrid,
    nodes: usize,
    caps: Vec<usize>,
    beta: usize,
    bits: Vec<bool>,
    row_counts: Vec<usize>,
    col_counts: Vec<usize>,
    started: bool,
    done: bool,
}

impl FeasibleSchedules {
    fn current(&self) -> Schedule {
        let values = DMatrix::from_fn(self.nodes, self.grid.intervals(), |j, k| {
            if self.bits[k * self.nodes + j] {
                1.0
            } else {
                0.0
            }
        });
        Schedule::new(values, self.grid).expect("binary values lie in the box")
    }

    /// Moves to the next feasible bit string; false when exhausted.
    fn advance(&mut self) -> bool {
        if !self.started {
            self.started = true;
            return true;
        }
        let mut i = self.bits.len();
        while i > 0 {
            i -= 1;
            let (j, k) = (i % self.nodes, i / self.nodes);
            if self.bits[i] {
                self.bits[i] = false;
                self.row_counts[j] -= 1;
                self.col_counts[k] -= 1;
            } else if self.row_counts[j] < self.caps[j] && self.col_counts[k] < self.beta {
                self.bits[i] = true;
                self.row_counts[j] += 1;
                self.col_counts[k] += 1;
                return true;
            }
        }
        false
    }
}

impl Iterator for FeasibleSchedules {
    type Item = Schedule;

    fn next(&mut self) -> Option<Schedule> {
        if self.done {
            return None;
        }
        if self.advance() {
            Some(self.current())
        } else {
            self.done = true;
            None
        }
    }
}

/// Iterator over the binary schedules with at most
/// `floor(alpha_j / dt + 1e-12)` active intervals per node and at most
/// `beta` active nodes per interval.
pub fn feasible_schedules(bud: &Budgets, grid: &TimeGrid, p: usize) -> Result<FeasibleSchedules> {
    check_size(p, grid)?;
    if bud.alpha.len() != p {
        return Err(Error::DimensionMismatch {
            field: "alpha",
            expected: alloc::format!("{p} entries"),
            found: alloc::format!("{} entries", bud.alpha.len()),
        });
    }
    let n = grid.intervals();
    Ok(FeasibleSchedules {
        grid: *grid,
        nodes: p,
        caps: (0..p).map(|j| bud.max_active_intervals(j, grid.dt())).collect(),
        beta: bud.beta,
        bits: vec![false; p * n],
        row_counts: vec![0; p],
        col_counts: vec![0; n],
        started: false,
        done: false,
    })
}

/// Number of feasible binary schedules together with an iterator over them.
pub fn enumerate_feasible(bud: &Budgets, grid: &TimeGrid, p: usize) -> Result<(usize, FeasibleSchedules)> {
    let iter = feasible_schedules(bud, grid, p)?;
    let mut counter = iter.clone();
    let mut count = 0;
    while counter.advance() {
        count += 1;
    }
    Ok((count, iter))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub best_value: f64,
    /// All schedules within [`MAXIMIZER_TOL`] of `best_value`, in
    /// enumeration order.
    pub best_schedules: Vec<Schedule>,
    pub num_feasible: usize,
    /// Size of the unconstrained binary space, `2^(pN)`.
    pub num_enumerated: u64,
}

struct Search<'a> {
    table: &'a StepTable,
    metric: &'a MetricSpec,
    nodes: usize,
    intervals: usize,
    caps: Vec<usize>,
    beta: usize,
    /// Injection per column mask, masks indexed with node 0 as the most
    /// significant bit so increasing masks follow lexicographic order.
    mask_injection: Vec<DMatrix<f64>>,
    mask_bits: Vec<Vec<bool>>,
    row_counts: Vec<usize>,
    chosen: Vec<usize>,
    best_value: f64,
    best: Vec<(f64, Vec<usize>)>,
    feasible: usize,
}

impl Search<'_> {
    fn descend(&mut self, k: usize, g: &DMatrix<f64>) -> Result<()> {
        if k == self.intervals {
            self.feasible += 1;
            let value = self.metric.evaluate(g)?;
            self.record(value);
            return Ok(());
        }
        let e = self.table.transition();
        let carried = e * g * e.transpose();
        for mask in 0..self.mask_bits.len() {
            let bits = &self.mask_bits[mask];
            if bits.iter().filter(|&&b| b).count() > self.beta {
                continue;
            }
            if (0..self.nodes).any(|j| bits[j] && self.row_counts[j] >= self.caps[j]) {
                continue;
            }
            for j in 0..self.nodes {
                self.row_counts[j] += bits[j] as usize;
            }
            let mut next = &carried + &self.mask_injection[mask];
            crate::linalg::symmetrize(&mut next);
            self.chosen.push(mask);
            self.descend(k + 1, &next)?;
            self.chosen.pop();
            for j in 0..self.nodes {
                self.row_counts[j] -= self.mask_bits[mask][j] as usize;
            }
        }
        Ok(())
    }

    fn record(&mut self, value: f64) {
        if value > self.best_value + MAXIMIZER_TOL {
            self.best.clear();
        }
        if value >= self.best_value - MAXIMIZER_TOL {
            self.best.push((value, self.chosen.clone()));
        }
        if value > self.best_value {
            self.best_value = value;
            let floor = value - MAXIMIZER_TOL;
            self.best.retain(|(v, _)| *v >= floor);
        }
    }
}

/// Maximizes `K(G_c(T))` over every binary feasible schedule.
pub fn brute_force_binary(
    sys: &LtiSystem,
    metric: &MetricSpec,
    bud: &Budgets,
    grid: &TimeGrid,
) -> Result<OracleResult> {
    let p = sys.nodes();
    check_size(p, grid)?;
    sys.validate()?;
    metric.validate()?;
    bud.validate(p, sys.horizon())?;
    let table = StepTable::new(sys, grid)?;

    let masks = 1usize << p;
    let mask_bits: Vec<Vec<bool>> = (0..masks)
        .map(|m| (0..p).map(|j| (m >> (p - 1 - j)) & 1 == 1).collect())
        .collect();
    let n = sys.states();
    let mask_injection = mask_bits
        .iter()
        .map(|bits| {
            let mut s = DMatrix::zeros(n, n);
            for (j, &on) in bits.iter().enumerate() {
                if on {
                    s += table.node_injection(j);
                }
            }
            s
        })
        .collect();

    let mut search = Search {
        table: &table,
        metric,
        nodes: p,
        intervals: grid.intervals(),
        caps: (0..p).map(|j| bud.max_active_intervals(j, grid.dt())).collect(),
        beta: bud.beta,
        mask_injection,
        mask_bits,
        row_counts: vec![0; p],
        chosen: Vec::with_capacity(grid.intervals()),
        best_value: f64::NEG_INFINITY,
        best: Vec::new(),
        feasible: 0,
    };
    search.descend(0, &DMatrix::zeros(n, n))?;

    let best_schedules = search
        .best
        .iter()
        .map(|(_, masks)| {
            let values = DMatrix::from_fn(p, grid.intervals(), |j, k| {
                if search.mask_bits[masks[k]][j] {
                    1.0
                } else {
                    0.0
                }
            });
            Schedule::new(values, *grid)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(OracleResult {
        best_value: search.best_value,
        best_schedules,
        num_feasible: search.feasible,
        num_enumerated: 1u64 << (p * grid.intervals()),
    })
}
