use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{check_feasibility, Budgets, Schedule, SparsityMode};

/// Tolerance on the relaxed budgets accepted as input.
const INPUT_TOL: f64 = 1e-8;

/// Rounds a relaxed-feasible schedule at 0.5 and then restores the binary
/// budgets by switching off the active entries of lowest priority, first
/// per node and then per interval. Priority is `scores` when given
/// (typically interval switching values), otherwise the relaxed value.
pub fn round_and_repair(sch: &Schedule, bud: &Budgets, scores: Option<&DMatrix<f64>>) -> Result<Schedule> {
    let report = check_feasibility(sch, bud, SparsityMode::L1, INPUT_TOL)?;
    if !report.feasible() {
        return Err(Error::Infeasible {
            violation: report.worst_violation,
        });
    }
    let v = sch.values();
    let (p, n) = v.shape();
    if let Some(s) = scores {
        if s.shape() != (p, n) {
            return Err(Error::DimensionMismatch {
                field: "scores",
                expected: alloc::format!("{p}x{n}"),
                found: alloc::format!("{}x{}", s.nrows(), s.ncols()),
            });
        }
    }
    let priority = |j: usize, k: usize| -> (f64, f64) {
        match scores {
            Some(s) => (s[(j, k)], v[(j, k)]),
            None => (v[(j, k)], 0.0),
        }
    };
    let lowest = |cells: &mut dyn Iterator<Item = (usize, usize)>| {
        cells.min_by(|&(j1, k1), &(j2, k2)| {
            let (a, b) = (priority(j1, k1), priority(j2, k2));
            a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1))
        })
    };

    let mut out = v.map(|x| if x >= 0.5 { 1.0 } else { 0.0 });
    let dt = sch.grid().dt();

    for j in 0..p {
        let cap = bud.max_active_intervals(j, dt);
        loop {
            let active: Vec<usize> = (0..n).filter(|&k| out[(j, k)] == 1.0).collect();
            if active.len() <= cap {
                break;
            }
            let (_, k) = lowest(&mut active.iter().map(|&k| (j, k))).expect("nonempty");
            out[(j, k)] = 0.0;
        }
    }
    for k in 0..n {
        loop {
            let active: Vec<usize> = (0..p).filter(|&j| out[(j, k)] == 1.0).collect();
            if active.len() <= bud.beta {
                break;
            }
            let (j, _) = lowest(&mut active.iter().map(|&j| (j, k))).expect("nonempty");
            out[(j, k)] = 0.0;
        }
    }
    Schedule::new(out, *sch.grid())
}
