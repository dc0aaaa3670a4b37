//! Batch runs: solve, compare with the oracle, evaluate energies, write
//! files.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sparsegram_core::solver::selection::{fit_thresholds, supporting_thresholds};
use sparsegram_core::{
    brute_force_binary, check_assumption, check_feasibility, discreteness_report, min_energy,
    propagate, round_and_repair, solve, switching_functions, verify_pmp, AdjointTable, AssumptionReport, Method,
    OracleResult, PmpResiduals, Schedule, SolverReport, SparsityMode,
};

use crate::config::{resolve, Instance, RunConfig};
use crate::io;

/// Relaxed and combinatorial values this close count as equivalent.
pub const EQUIVALENCE_TOL: f64 = 1e-8;

/// Feasibility slack when checking a schedule read from disk.
const CHECK_FEASIBILITY_TOL: f64 = 1e-9;

/// A schedule as CSV-compatible rows `t_start, v_1, ..., v_p`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleRows {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl From<&Schedule> for ScheduleRows {
    fn from(sch: &Schedule) -> Self {
        let grid = sch.grid();
        let columns = std::iter::once("t_start".to_string())
            .chain((1..=sch.nodes()).map(|j| format!("v_{j}")))
            .collect();
        let rows = (0..grid.intervals())
            .map(|k| std::iter::once(grid.point(k)).chain(sch.interval_values(k)).collect())
            .collect();
        Self { columns, rows }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rounded {
    pub objective: f64,
    pub schedule: ScheduleRows,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solution {
    pub method: Method,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub discreteness_fraction: f64,
    pub ties: usize,
    pub multiplicity_warning: bool,
    pub thresholds: Vec<f64>,
    pub schedule: ScheduleRows,
    pub assumption: AssumptionReport,
    pub pmp: PmpResiduals,
    pub objective_trace: Vec<f64>,
    pub rounded: Option<Rounded>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSummary {
    pub best_value: f64,
    pub num_feasible: usize,
    pub num_enumerated: u64,
    pub best_schedules: Vec<ScheduleRows>,
}

impl From<&OracleResult> for OracleSummary {
    fn from(r: &OracleResult) -> Self {
        Self {
            best_value: r.best_value,
            num_feasible: r.num_feasible,
            num_enumerated: r.num_enumerated,
            best_schedules: r.best_schedules.iter().map(ScheduleRows::from).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Equivalence {
    pub method: Method,
    pub relaxed_value: f64,
    pub oracle_value: f64,
    /// `|relaxed - oracle| / (1 + |oracle|)`.
    pub relative_gap: f64,
    pub rounded_gap: Option<f64>,
    pub equivalent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyEntry {
    pub method: Method,
    pub target: Vec<f64>,
    pub energy: Option<f64>,
    pub condition: Option<f64>,
    /// Set when the schedule's Gramian cannot reach the target.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub solutions: Vec<Solution>,
    pub oracle: Option<OracleSummary>,
    pub equivalence: Option<Vec<Equivalence>>,
    pub energy: Vec<EnergyEntry>,
    pub timings: Vec<Timing>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub config: RunConfig,
    pub schedule_path: PathBuf,
    pub objective: f64,
    pub relaxed_feasible: bool,
    /// Only for binary schedules.
    pub binary_feasible: Option<bool>,
    pub discreteness_fraction: f64,
    pub thresholds: Vec<f64>,
    /// Whether the thresholds support the schedule as a best response.
    pub supported: bool,
    pub assumption: AssumptionReport,
    pub pmp: PmpResiduals,
}

struct Clock(Vec<Timing>);

impl Clock {
    fn time<T>(&mut self, stage: impl Into<String>, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let stage = stage.into();
        let start = Instant::now();
        let out = f().with_context(|| format!("stage `{stage}` failed"))?;
        self.0.push(Timing {
            stage,
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(out)
    }
}

fn relative_gap(value: f64, reference: f64) -> f64 {
    (value - reference).abs() / (1.0 + reference.abs())
}

/// Adds `.method` before the extension when several methods share a path.
fn per_method(path: &Path, method: Method, several: bool) -> PathBuf {
    if !several {
        return path.to_path_buf();
    }
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{}.{}", method.name(), ext.to_string_lossy()),
        None => format!("{stem}.{}", method.name()),
    };
    path.with_file_name(name)
}

fn objective_of(inst: &Instance, sch: &Schedule) -> Result<f64> {
    Ok(inst.metric.evaluate(propagate(&inst.sys, sch)?.terminal())?)
}

/// Runs every configured method and diagnostic and writes the requested
/// files. Relative output paths resolve against `base`.
pub fn run(cfg: &RunConfig, base: &Path) -> Result<RunReport> {
    let mut clock = Clock(Vec::new());
    let inst = clock.time("validate", || cfg.instance())?;

    let mut solved: Vec<(SolverReport, Option<(Schedule, f64)>)> = Vec::new();
    for &method in &cfg.solver.methods {
        let opts = cfg.solver_options(method);
        let report = clock.time(format!("solve ({})", method.name()), || {
            Ok(solve(&inst.sys, &inst.metric, &inst.bud, &inst.grid, &opts)?)
        })?;
        let rounded = if cfg.solver.round {
            Some(clock.time(format!("round ({})", method.name()), || {
                let sch = round_and_repair(&report.schedule, &inst.bud, None)?;
                let value = objective_of(&inst, &sch)?;
                Ok((sch, value))
            })?)
        } else {
            None
        };
        solved.push((report, rounded));
    }

    let oracle = if cfg.oracle.enabled {
        Some(clock.time("oracle", || Ok(brute_force_binary(&inst.sys, &inst.metric, &inst.bud, &inst.grid)?))?)
    } else {
        None
    };
    let equivalence = oracle.as_ref().map(|o| {
        solved
            .iter()
            .map(|(r, rounded)| {
                let gap = relative_gap(r.objective, o.best_value);
                let rounded_gap = rounded.as_ref().map(|(_, v)| relative_gap(*v, o.best_value));
                Equivalence {
                    method: r.method,
                    relaxed_value: r.objective,
                    oracle_value: o.best_value,
                    relative_gap: gap,
                    rounded_gap,
                    equivalent: gap <= EQUIVALENCE_TOL,
                }
            })
            .collect()
    });

    let energy = clock.time("energy", || {
        let mut out = Vec::new();
        for (r, _) in &solved {
            let g = propagate(&inst.sys, &r.schedule)?.into_terminal();
            for x in &inst.targets {
                let entry = match min_energy(&g, x) {
                    Ok(e) => (Some(e.energy), Some(e.condition), None),
                    Err(err) => (None, None, Some(err.to_string())),
                };
                out.push(EnergyEntry {
                    method: r.method,
                    target: x.iter().copied().collect(),
                    energy: entry.0,
                    condition: entry.1,
                    error: entry.2,
                });
            }
        }
        Ok(out)
    })?;

    let solutions: Vec<Solution> = solved
        .iter()
        .map(|(r, rounded)| Solution {
            method: r.method,
            objective: r.objective,
            converged: r.converged,
            iterations: r.iterations,
            discreteness_fraction: r.discreteness_fraction,
            ties: r.ties,
            multiplicity_warning: r.multiplicity_warning,
            thresholds: r.thresholds.clone(),
            schedule: ScheduleRows::from(&r.schedule),
            assumption: r.assumption.clone(),
            pmp: r.pmp.clone(),
            objective_trace: r.objective_trace.clone(),
            rounded: rounded.as_ref().map(|(sch, value)| Rounded {
                objective: *value,
                schedule: ScheduleRows::from(sch),
            }),
        })
        .collect();

    clock.time("write", || write_artifacts(cfg, &inst, &solved, base))?;
    let mut report = RunReport {
        config: cfg.clone(),
        solutions,
        oracle: oracle.as_ref().map(OracleSummary::from),
        equivalence,
        energy,
        timings: Vec::new(),
    };
    report.timings = clock.0;
    if let Some(path) = &cfg.outputs.report_path {
        write_json(&resolve(base, path), &report)?;
    }
    Ok(report)
}

fn write_artifacts(
    cfg: &RunConfig,
    inst: &Instance,
    solved: &[(SolverReport, Option<(Schedule, f64)>)],
    base: &Path,
) -> Result<()> {
    let out = &cfg.outputs;
    let several = solved.len() > 1;
    for (r, _) in solved {
        if let Some(path) = &out.schedule_path {
            io::write_schedule(&per_method(&resolve(base, path), r.method, several), &r.schedule)?;
        }
        let wants_trajectory = out.trajectory_path.is_some() || out.eigenvalue_path.is_some();
        if wants_trajectory || out.switching_path.is_some() {
            let traj = propagate(&inst.sys, &r.schedule)?;
            if let Some(path) = &out.trajectory_path {
                io::write_trajectory(&per_method(&resolve(base, path), r.method, several), &traj)?;
            }
            if let Some(path) = &out.eigenvalue_path {
                io::write_eigenvalues(&per_method(&resolve(base, path), r.method, several), &traj)?;
            }
            if let Some(path) = &out.switching_path {
                let grad = inst.metric.gradient(traj.terminal())?.matrix;
                let profile = switching_functions(&inst.sys, &grad, &inst.grid)?;
                io::write_switching(&per_method(&resolve(base, path), r.method, several), &profile)?;
            }
        }
    }
    if let Some(path) = &out.objective_trace_path {
        io::write_objective_traces(
            &resolve(base, path),
            solved.iter().map(|(r, _)| (r.method.name(), r.objective_trace.as_slice())),
        )?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Oracle alone, no solvers.
pub fn run_oracle(cfg: &RunConfig, base: &Path) -> Result<RunReport> {
    let mut clock = Clock(Vec::new());
    let inst = clock.time("validate", || cfg.instance())?;
    let oracle = clock.time("oracle", || Ok(brute_force_binary(&inst.sys, &inst.metric, &inst.bud, &inst.grid)?))?;
    let report = RunReport {
        config: cfg.clone(),
        solutions: Vec::new(),
        oracle: Some(OracleSummary::from(&oracle)),
        equivalence: None,
        energy: Vec::new(),
        timings: clock.0,
    };
    if let Some(path) = &cfg.outputs.report_path {
        write_json(&resolve(base, path), &report)?;
    }
    Ok(report)
}

/// Diagnostics for a schedule read from `schedule_path`: objective,
/// feasibility, the non-constancy check and optimality residuals with the
/// best supporting thresholds.
pub fn check(cfg: &RunConfig, schedule_path: &Path) -> Result<CheckReport> {
    let inst = cfg.instance().context("stage `validate` failed")?;
    let sch = io::read_schedule(schedule_path, &inst.grid, inst.sys.nodes()).context("stage `read schedule` failed")?;
    let diagnose = || -> Result<CheckReport> {
        let g = propagate(&inst.sys, &sch)?.into_terminal();
        let objective = inst.metric.evaluate(&g)?;
        let grad = inst.metric.gradient(&g)?.matrix;
        let relaxed_feasible = check_feasibility(&sch, &inst.bud, SparsityMode::L1, CHECK_FEASIBILITY_TOL)?.feasible();
        let binary_feasible = if sch.is_binary() {
            Some(check_feasibility(&sch, &inst.bud, SparsityMode::L0, 0.0)?.feasible())
        } else {
            None
        };
        let opts = cfg.solver_options(Method::FixedPoint);
        let profile = switching_functions(&inst.sys, &grad, &inst.grid)?;
        let assumption = check_assumption(&profile, opts.assumption_tol);
        let table = AdjointTable::new(&inst.sys, &inst.grid)?;
        let scores = table.interval_switching(&grad);
        let tol = opts.threshold_bisection_tol;
        let (thresholds, supported) = match supporting_thresholds(&scores, sch.values(), &inst.bud, &inst.grid, tol) {
            Some(fit) => (fit.thresholds, true),
            None => (fit_thresholds(&scores, &inst.bud, &inst.grid, tol).thresholds, false),
        };
        let pmp = verify_pmp(&inst.sys, &inst.metric, &inst.bud, &sch, &thresholds)?;
        Ok(CheckReport {
            config: cfg.clone(),
            schedule_path: schedule_path.to_path_buf(),
            objective,
            relaxed_feasible,
            binary_feasible,
            discreteness_fraction: discreteness_report(&sch, opts.discreteness_tol),
            thresholds,
            supported,
            assumption,
            pmp,
        })
    };
    diagnose().context("stage `diagnostics` failed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_suffix_only_when_shared() {
        let p = Path::new("out/schedule.csv");
        assert_eq!(per_method(p, Method::FixedPoint, false), PathBuf::from("out/schedule.csv"));
        assert_eq!(
            per_method(p, Method::FixedPoint, true),
            PathBuf::from("out/schedule.fixed_point.csv")
        );
        assert_eq!(per_method(Path::new("s"), Method::ProjectedGradient, true), PathBuf::from("s.projected_gradient"));
    }
}
