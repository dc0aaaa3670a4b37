//! Acceptance gate: one PASS/FAIL line per criterion, with detail lines
//! underneath. Always exits 0 so the rest of the workspace still runs; the
//! verdict is in the output.

mod common;

use std::time::Instant;

use common::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sparsegram_core::nalgebra::{DMatrix, DVector};
use sparsegram_core::*;

/// Grid for the discreteness runs. The gridded relaxation of a smooth
/// metric keeps fractional entries on the few intervals where switching
/// functions cross, so the fraction approaches one only as the grid
/// refines.
const DISCRETE_GRID: usize = 1024;

struct Gate {
    verdicts: Vec<(usize, bool)>,
}

impl Gate {
    fn record(&mut self, id: usize, name: &str, pass: bool, summary: String) {
        println!("criterion {id} {} {name}: {summary}", if pass { "PASS" } else { "FAIL" });
        self.verdicts.push((id, pass));
    }
}

fn detail(line: String) {
    println!("    {line}");
}

fn metrics() -> [MetricSpec; 2] {
    [MetricSpec::trace(), MetricSpec::log_det(1e-8)]
}

fn pg() -> SolverOptions {
    SolverOptions::with_method(Method::ProjectedGradient)
}

fn fp() -> SolverOptions {
    SolverOptions::with_method(Method::FixedPoint)
}

fn propagation_matches_quadrature(gate: &mut Gate, rng: &mut ChaCha8Rng) {
    let start = Instant::now();
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let (n, p) = (rng.random_range(1..=5), rng.random_range(1..=4));
        let horizon = rng.random_range(0.5..3.0);
        let norm = rng.random_range(0.5..10.0);
        let stable = rng.random_bool(0.5);
        let sys = random_system(rng, n, p, horizon, norm, stable);
        let grid = TimeGrid::for_system(&sys, rng.random_range(2..=16)).unwrap();
        let sch = random_binary(rng, p, grid);
        let g = propagate(&sys, &sch).unwrap().into_terminal();
        let q = gramian_quadrature(&sys, &sch).unwrap();
        worst = worst.max((&g - &q).norm() / (1.0 + g.norm()));
    }
    let secs = start.elapsed().as_secs_f64();
    gate.record(
        1,
        "propagation matches quadrature",
        worst <= 1e-10 && secs < 10.0,
        format!("worst scaled gap {worst:.2e} (tol 1e-10), {secs:.2} s (limit 10 s)"),
    );
}

fn gradients_match_differences(gate: &mut Gate, rng: &mut ChaCha8Rng) {
    let start = Instant::now();
    let mut pass = true;
    for metric in [MetricSpec::trace(), MetricSpec::log_det(1e-8), MetricSpec::min_eig()] {
        let mut worst = 0.0_f64;
        for _ in 0..20 {
            let n = rng.random_range(1..=5);
            // spectrum with a simple smallest eigenvalue
            let mut spectrum: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..5.0)).collect();
            spectrum[0] = rng.random_range(0.01..0.4);
            let g = spd_with_spectrum(rng, &spectrum);
            let grad = metric.gradient(&g).unwrap().matrix;
            for _ in 0..20 {
                let dir = random_symmetric(rng, n);
                let h = 1e-5;
                let fd = (metric.evaluate(&(&g + &dir * h)).unwrap() - metric.evaluate(&(&g - &dir * h)).unwrap())
                    / (2.0 * h);
                let exact = grad.dot(&dir);
                worst = worst.max((fd - exact).abs() / (grad.norm() * dir.norm()));
            }
        }
        pass &= worst <= 1e-6;
        detail(format!("{}: worst relative error {worst:.2e}", metric.kind.name()));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 5.0;
    gate.record(
        2,
        "metric gradients match finite differences",
        pass,
        format!("all metrics within 1e-6: {pass}, {secs:.2} s (limit 5 s)"),
    );
}

/// Largest relative error between `q dt` and central differences of the
/// objective in every schedule entry.
fn sensitivity_error(sys: &LtiSystem, metric: &MetricSpec, sch: &Schedule) -> f64 {
    let h = 1e-4;
    let grid = *sch.grid();
    let g = propagate(sys, sch).unwrap().into_terminal();
    let grad = metric.gradient(&g).unwrap().matrix;
    let q = switching_functions(sys, &grad, &grid).unwrap().q;
    let mut worst = 0.0_f64;
    for j in 0..sch.nodes() {
        for k in 0..grid.intervals() {
            let bumped = |delta: f64| {
                let mut v = sch.values().clone();
                v[(j, k)] += delta;
                let s = Schedule::new(v, grid).unwrap();
                metric.evaluate(propagate(sys, &s).unwrap().terminal()).unwrap()
            };
            let fd = (bumped(h) - bumped(-h)) / (2.0 * h);
            worst = worst.max((q[(j, k)] * grid.dt() - fd).abs() / fd.abs());
        }
    }
    worst
}

fn switching_is_sensitivity(gate: &mut Gate, rng: &mut ChaCha8Rng) {
    let start = Instant::now();
    let (mut worst, mut lowest_order) = (0.0_f64, f64::INFINITY);
    for _ in 0..10 {
        let (n, p) = (rng.random_range(1..=4), rng.random_range(1..=3));
        let stable = rng.random_bool(0.5);
        let norm = rng.random_range(1.0..5.0);
        let sys = random_system(rng, n, p, 1.0, norm, stable);
        let fine = random_fractional(rng, p, TimeGrid::for_system(&sys, 64).unwrap(), 0.1, 0.9);
        // the coarse schedule is the fine one averaged over pairs
        let coarse_values = DMatrix::from_fn(p, 32, |j, k| {
            0.5 * (fine.values()[(j, 2 * k)] + fine.values()[(j, 2 * k + 1)])
        });
        let coarse = Schedule::new(coarse_values, TimeGrid::for_system(&sys, 32).unwrap()).unwrap();
        for metric in metrics() {
            let e64 = sensitivity_error(&sys, &metric, &fine);
            let e32 = sensitivity_error(&sys, &metric, &coarse);
            worst = worst.max(e64);
            lowest_order = lowest_order.min((e32 / e64).log2());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    gate.record(
        3,
        "switching functions are interval sensitivities",
        worst <= 1e-3 && lowest_order >= 1.0 && secs < 30.0,
        format!(
            "worst relative error at N=64 {worst:.2e} (tol 1e-3), lowest observed order {lowest_order:.2} (min 1), \
             {secs:.2} s (limit 30 s)"
        ),
    );
}

/// Projected-gradient runs on a fine grid, for both smooth metrics.
struct FineRun {
    metric: &'static str,
    report: SolverReport,
}

fn discreteness(gate: &mut Gate, rng: &mut ChaCha8Rng) -> Vec<FineRun> {
    let start = Instant::now();
    let mut runs = Vec::new();
    let (mut accepted, mut skipped) = (0, 0);
    let mut worst = [1.0_f64; 2];
    while accepted < 20 {
        let (n, p) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let stable = rng.random_bool(0.5);
        let norm = rng.random_range(0.5..5.0);
        let sys = random_system(rng, n, p, 1.0, norm, stable);
        let grid = TimeGrid::for_system(&sys, DISCRETE_GRID).unwrap();
        let bud = random_grid_budgets(rng, p, &grid);
        let reports: Vec<SolverReport> =
            metrics().iter().map(|m| solve(&sys, m, &bud, &grid, &pg()).unwrap()).collect();
        if reports.iter().any(|r| !r.assumption.pass) {
            skipped += 1;
            continue;
        }
        accepted += 1;
        for (i, (metric, report)) in metrics().iter().zip(reports).enumerate() {
            worst[i] = worst[i].min(discreteness_report(&report.schedule, 1e-3));
            runs.push(FineRun { metric: metric.kind.name(), report });
        }
    }
    detail(format!("trace: worst fraction {:.4}; log_det: worst fraction {:.4}", worst[0], worst[1]));
    detail(format!("{skipped} drawn instances failed the assumption check and were redrawn"));

    // zero drift makes every switching function constant
    let zero = LtiSystem::new(DMatrix::zeros(3, 3), uniform_matrix(rng, 3, 2), 1.0).unwrap();
    let grid = TimeGrid::for_system(&zero, 16).unwrap();
    let g = propagate(&zero, &Schedule::ones(2, grid)).unwrap().into_terminal();
    let mut zero_flagged = true;
    for metric in metrics() {
        let grad = metric.gradient(&g).unwrap().matrix;
        let profile = switching_functions(&zero, &grad, &grid).unwrap();
        zero_flagged &= !check_assumption(&profile, pg().assumption_tol).pass;
    }
    detail(format!("zero-drift instance fails the assumption check: {zero_flagged}"));

    let secs = start.elapsed().as_secs_f64();
    gate.record(
        4,
        "projected gradient solutions are discrete",
        worst.iter().all(|&w| w >= 0.99) && zero_flagged,
        format!("N={DISCRETE_GRID}, worst fraction {:.4} (min 0.99 at tol 1e-3), {secs:.1} s", worst[0].min(worst[1])),
    );
    runs
}

struct OracleRun {
    objective: f64,
    converged: bool,
    pmp: PmpResiduals,
}

fn equivalence(gate: &mut Gate, rng: &mut ChaCha8Rng) -> Vec<OracleRun> {
    let start = Instant::now();
    let mut fixed_points = Vec::new();
    let mut pass = true;
    for metric in metrics() {
        let (mut accepted, mut skipped) = (0, 0);
        let (mut worst_relaxed, mut worst_rounded, mut worst_fixed) = (0.0_f64, 0.0_f64, 0.0_f64);
        let (mut misses, mut above) = (0, 0);
        while accepted < 10 {
            let (n, p) = (rng.random_range(1..=3), rng.random_range(1..=4));
            let stable = rng.random_bool(0.5);
            let norm = rng.random_range(0.5..5.0);
            let sys = random_system(rng, n, p, 1.0, norm, stable);
            let grid = TimeGrid::for_system(&sys, 16 / p).unwrap();
            let bud = random_grid_budgets(rng, p, &grid);
            let relaxed = solve(&sys, &metric, &bud, &grid, &pg()).unwrap();
            if !relaxed.assumption.pass {
                skipped += 1;
                continue;
            }
            accepted += 1;
            let oracle = brute_force_binary(&sys, &metric, &bud, &grid).unwrap();
            let rounded = round_and_repair(&relaxed.schedule, &bud, None).unwrap();
            let rounded_value = metric.evaluate(propagate(&sys, &rounded).unwrap().terminal()).unwrap();
            let gap = relative_gap(relaxed.objective, oracle.best_value);
            let rounded_gap = relative_gap(rounded_value, oracle.best_value);
            if gap > 1e-8 || rounded_gap > 1e-8 {
                misses += 1;
            }
            // a relaxed value above every binary schedule means the gridded
            // relaxation is not exact on this instance
            if relaxed.objective > oracle.best_value + 1e-8 * (1.0 + oracle.best_value.abs()) {
                above += 1;
            }
            worst_relaxed = worst_relaxed.max(gap);
            worst_rounded = worst_rounded.max(rounded_gap);

            let fixed = solve(&sys, &metric, &bud, &grid, &fp()).unwrap();
            worst_fixed = worst_fixed.max(relative_gap(fixed.objective, oracle.best_value));
            let pmp = verify_pmp(&sys, &metric, &bud, &fixed.schedule, &fixed.thresholds).unwrap();
            fixed_points.push(OracleRun { objective: fixed.objective, converged: fixed.converged, pmp });
        }
        pass &= misses == 0;
        detail(format!(
            "{}: {misses}/10 instances outside 1e-8 ({above} with the relaxed value above the oracle); worst gap \
             relaxed {worst_relaxed:.2e}, rounded {worst_rounded:.2e}, fixed point {worst_fixed:.2e}; {skipped} redrawn",
            metric.kind.name()
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 300.0;
    gate.record(
        5,
        "relaxed and combinatorial optima coincide",
        pass,
        format!("gap tol 1e-8 for relaxed and rounded values, {secs:.1} s (limit 300 s)"),
    );
    fixed_points
}

fn pmp_residuals(gate: &mut Gate, runs: &[OracleRun]) {
    let mut worst = [0.0_f64; 4];
    let mut checked = 0;
    for run in runs.iter().filter(|r| r.converged) {
        checked += 1;
        let scale = 1.0 + run.objective.abs();
        let r = &run.pmp;
        for (w, value) in worst.iter_mut().zip([
            r.adjoint_residual,
            r.transversality_residual,
            r.maximum_condition_gap,
            r.complementary_slackness_residual,
        ]) {
            *w = w.max(value / scale);
        }
    }
    detail(format!(
        "scaled residuals: adjoint {:.2e}, transversality {:.2e}, maximum condition {:.2e}, slackness {:.2e}",
        worst[0], worst[1], worst[2], worst[3]
    ));
    gate.record(
        6,
        "optimality residuals vanish at converged fixed points",
        checked > 0 && worst.iter().all(|&w| w <= 1e-6),
        format!("{checked}/{} runs converged and checked, tol 1e-6 (1 + |J|)", runs.len()),
    );
}

fn monotone_ascent(gate: &mut Gate, runs: &[FineRun]) {
    let mut worst = 0.0_f64;
    let mut by_metric = [0usize; 2];
    for run in runs {
        by_metric[(run.metric != "trace") as usize] += 1;
        for w in run.report.objective_trace.windows(2) {
            worst = worst.max(w[0] - w[1]);
        }
    }
    gate.record(
        7,
        "projected gradient ascends monotonically",
        worst <= 1e-12 && !runs.is_empty(),
        format!("{} trace and {} log_det runs, largest decrease {worst:.2e} (tol 1e-12)", by_metric[0], by_metric[1]),
    );
}

/// Minimum energy to reach `x_f` with inputs piecewise constant on `m`
/// sub-steps per interval. A fractional activation `v` scales its input
/// column by `sqrt(v)`, which gives the schedule's Gramian exactly.
fn discrete_energy(sys: &LtiSystem, sch: &Schedule, x_f: &DVector<f64>, m: usize) -> f64 {
    let n = sys.states();
    let grid = sch.grid();
    let h = grid.dt() / m as f64;
    let mut block = DMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(sys.a());
    block.view_mut((0, n), (n, n)).fill_with_identity();
    let e = matrix_exponential(&(block * h)).unwrap();
    let step = e.view((0, 0), (n, n)).into_owned();
    let integral = e.view((0, n), (n, n)).into_owned();

    // walk backwards from T, carrying exp(A (T - t_{i+1}))
    let mut carry = DMatrix::identity(n, n);
    let mut w = DMatrix::zeros(n, n);
    for k in (0..grid.intervals()).rev() {
        let weights = DMatrix::from_diagonal(&DVector::from_fn(sch.nodes(), |j, _| sch.get(j, k).sqrt()));
        let input = &integral * sys.b() * weights;
        for _ in 0..m {
            let f = &carry * &input;
            w += &f * f.transpose() / h;
            carry = &carry * &step;
        }
    }
    let solved = w.cholesky().unwrap().solve(x_f);
    x_f.dot(&solved)
}

fn energy_consistency(gate: &mut Gate, rng: &mut ChaCha8Rng) {
    let mut worst = 0.0_f64;
    let mut below_baseline = Vec::new();
    let mut accepted = 0;
    while accepted < 5 {
        let n = rng.random_range(2..=4);
        let p = rng.random_range(2..=3);
        let stable = rng.random_bool(0.5);
        let norm = rng.random_range(0.5..3.0);
        let sys = random_system(rng, n, p, 1.0, norm, stable);
        let grid = TimeGrid::for_system(&sys, 8).unwrap();
        let bud = Budgets::new((0..p).map(|_| rng.random_range(3..=6) as f64 * grid.dt()).collect(), 1);
        let baseline_values = DMatrix::from_fn(p, 8, |j, _| (bud.alpha[j] / sys.horizon()).min(1.0 / p as f64));
        let baseline = Schedule::new(baseline_values, grid).unwrap();
        let g_base = propagate(&sys, &baseline).unwrap().into_terminal();
        if g_base.symmetric_eigenvalues().min() < 1e-4 {
            continue;
        }
        accepted += 1;
        let report = solve(&sys, &MetricSpec::log_det(1e-8), &bud, &grid, &pg()).unwrap();
        let g = propagate(&sys, &report.schedule).unwrap().into_terminal();
        let mut wins = 0;
        for _ in 0..5 {
            let x_f = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let exact = min_energy(&g, &x_f).unwrap().energy;
            // second-order in the sub-step, so extrapolate
            let coarse = discrete_energy(&sys, &report.schedule, &x_f, 64);
            let fine = discrete_energy(&sys, &report.schedule, &x_f, 128);
            let reference = (4.0 * fine - coarse) / 3.0;
            worst = worst.max((exact - reference).abs() / reference.abs());
            wins += (exact <= min_energy(&g_base, &x_f).unwrap().energy) as usize;
        }
        below_baseline.push(wins);
    }
    detail(format!(
        "targets where the log_det schedule needs no more energy than the uniform schedule: {below_baseline:?} of 5 \
         (reported only)"
    ));
    for (i, wins) in below_baseline.iter().enumerate() {
        if *wins < 4 {
            detail(format!("instance {i}: only {wins}/5 targets at or below the baseline"));
        }
    }
    gate.record(
        8,
        "minimum energy matches discrete minimum-norm inputs",
        worst <= 1e-6,
        format!("worst relative error {worst:.2e} (tol 1e-6)"),
    );
}

fn analytic_cases(gate: &mut Gate) {
    let sys = LtiSystem::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2), 1.0).unwrap();
    let grid = TimeGrid::new(1.0, 2).unwrap();
    let bud = Budgets::new(vec![0.5, 0.5], 1);
    let mut worst_objective = 0.0_f64;
    for opts in [pg(), fp()] {
        let report = solve(&sys, &MetricSpec::trace(), &bud, &grid, &opts).unwrap();
        worst_objective = worst_objective.max((report.objective - 1.0).abs());
    }

    let horizon = 1.0;
    let sys = double_integrator(horizon);
    let mut worst_profile = 0.0_f64;
    for intervals in [2, 16, 64] {
        let grid = TimeGrid::new(horizon, intervals).unwrap();
        let q = switching_functions(&sys, &DMatrix::identity(2, 2), &grid).unwrap().q;
        for k in 0..intervals {
            let t = grid.midpoint(k);
            worst_profile = worst_profile.max((q[(0, k)] - ((horizon - t).powi(2) + 1.0)).abs());
        }
    }
    gate.record(
        9,
        "analytic cases",
        worst_objective <= 1e-12 && worst_profile <= 1e-12,
        format!("integrator pair objective error {worst_objective:.1e}, double integrator profile error {worst_profile:.1e} (tol 1e-12)"),
    );
}

fn main() {
    let start = Instant::now();
    let mut gate = Gate { verdicts: Vec::new() };
    let mut rng = rng(20_241_016);

    propagation_matches_quadrature(&mut gate, &mut rng);
    gradients_match_differences(&mut gate, &mut rng);
    switching_is_sensitivity(&mut gate, &mut rng);
    let fine_runs = discreteness(&mut gate, &mut rng);
    let oracle_runs = equivalence(&mut gate, &mut rng);
    pmp_residuals(&mut gate, &oracle_runs);
    monotone_ascent(&mut gate, &fine_runs);
    energy_consistency(&mut gate, &mut rng);
    analytic_cases(&mut gate);

    let failed: Vec<usize> = gate.verdicts.iter().filter(|(_, ok)| !ok).map(|(id, _)| *id).collect();
    println!(
        "acceptance: {}/{} criteria pass, failing {:?}, {:.1} s",
        gate.verdicts.len() - failed.len(),
        gate.verdicts.len(),
        failed,
        start.elapsed().as_secs_f64()
    );
}
