//! CSV files for time-indexed data. Numbers are written with 17
//! significant digits, so values read back are bit-identical.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use sparsegram_core::nalgebra::DMatrix;
use sparsegram_core::{GramianTrajectory, Schedule, SwitchingProfile, TimeGrid};

/// Start times closer than this to the grid count as on the grid.
const GRID_TOL: f64 = 1e-9;

pub fn number(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_rows(path: &Path, header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(&header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn numbered(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |i| format!("{prefix}{i}"))
}

/// `t_start, v_1, ..., v_p`, one row per interval.
pub fn write_schedule(path: &Path, sch: &Schedule) -> Result<()> {
    let grid = sch.grid();
    let header = std::iter::once("t_start".to_string()).chain(numbered("v_", sch.nodes())).collect();
    let rows = (0..grid.intervals()).map(|k| {
        std::iter::once(number(grid.point(k)))
            .chain(sch.interval_values(k).into_iter().map(number))
            .collect()
    });
    write_rows(path, header, rows)
}

/// Reads a schedule written by [`write_schedule`] and checks it against
/// `grid` and the node count.
pub fn read_schedule(path: &Path, grid: &TimeGrid, nodes: usize) -> Result<Schedule> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let header = r.headers()?.clone();
    ensure!(
        header.len() == nodes + 1 && &header[0] == "t_start",
        "{}: expected header t_start,v_1..v_{nodes}, found {} columns",
        path.display(),
        header.len()
    );
    let mut values = DMatrix::zeros(nodes, grid.intervals());
    let mut count = 0;
    for (k, record) in r.records().enumerate() {
        let line = k + 2;
        let record = record.with_context(|| format!("{} line {line}", path.display()))?;
        if k >= grid.intervals() {
            bail!("{}: more than N = {} rows", path.display(), grid.intervals());
        }
        let parse = |i: usize| -> Result<f64> {
            record[i]
                .trim()
                .parse()
                .with_context(|| format!("{} line {line}, column {}: not a number", path.display(), i + 1))
        };
        let t = parse(0)?;
        ensure!(
            (t - grid.point(k)).abs() <= GRID_TOL * (1.0 + grid.horizon()),
            "{} line {line}: t_start {t} is not grid point {}",
            path.display(),
            grid.point(k)
        );
        for j in 0..nodes {
            values[(j, k)] = parse(j + 1)?;
        }
        count += 1;
    }
    ensure!(count == grid.intervals(), "{}: {count} rows, expected N = {}", path.display(), grid.intervals());
    Schedule::new(values, *grid).with_context(|| format!("{}: invalid schedule", path.display()))
}

/// `t_mid, q_1, ..., q_p`.
pub fn write_switching(path: &Path, profile: &SwitchingProfile) -> Result<()> {
    let grid = &profile.grid;
    let header = std::iter::once("t_mid".to_string()).chain(numbered("q_", profile.nodes())).collect();
    let rows = (0..grid.intervals()).map(|k| {
        std::iter::once(number(grid.midpoint(k)))
            .chain(profile.q.column(k).iter().map(|&q| number(q)))
            .collect()
    });
    write_rows(path, header, rows)
}

/// `t, G_11, G_12, ..., G_nn` (row-major), one row per grid point.
pub fn write_trajectory(path: &Path, traj: &GramianTrajectory) -> Result<()> {
    let n = traj.terminal().nrows();
    let header = std::iter::once("t".to_string())
        .chain((1..=n).flat_map(|i| (1..=n).map(move |j| format!("G_{i}{j}"))))
        .collect();
    let rows = traj.states.iter().enumerate().map(|(k, g)| {
        std::iter::once(number(traj.grid.point(k)))
            .chain((0..n).flat_map(|i| (0..n).map(move |j| number(g[(i, j)]))))
            .collect()
    });
    write_rows(path, header, rows)
}

/// `t, lambda_1, ..., lambda_n` in ascending order, one row per grid point.
pub fn write_eigenvalues(path: &Path, traj: &GramianTrajectory) -> Result<()> {
    let n = traj.terminal().nrows();
    let header = std::iter::once("t".to_string()).chain(numbered("lambda_", n)).collect();
    let rows = traj.states.iter().enumerate().map(|(k, g)| {
        let mut ev: Vec<f64> = g.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        std::iter::once(number(traj.grid.point(k))).chain(ev.into_iter().map(number)).collect()
    });
    write_rows(path, header, rows)
}

/// `method, iteration, objective`.
pub fn write_objective_traces<'a>(path: &Path, traces: impl Iterator<Item = (&'a str, &'a [f64])>) -> Result<()> {
    let header = vec!["method".into(), "iteration".into(), "objective".into()];
    let rows = traces.flat_map(|(method, trace)| {
        trace
            .iter()
            .enumerate()
            .map(move |(i, &v)| vec![method.to_string(), i.to_string(), number(v)])
    });
    write_rows(path, header, rows)
}
