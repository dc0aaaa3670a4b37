use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::projection::FeasibleSet;
use super::{fit_thresholds, Method, Problem, RunStats, SolverOptions, SolverReport, StepSize};
use crate::error::Result;
use crate::metrics::MetricSpec;
use crate::model::{Budgets, LtiSystem, TimeGrid};

const MIN_STEP: f64 = 1e-16;
const MAX_STEP: f64 = 1e8;

struct Run {
    values: DMatrix<f64>,
    objective: f64,
    stats: RunStats,
}

/// Projected-gradient ascent on the relaxed problem. The ascent direction
/// is the exact gradient `dJ/dv_jk` (the interval integral of `q_j`),
/// normalized to unit max-norm. Each iteration tries twice the last
/// accepted step and halves until the objective strictly increases, so the
/// objective trace is non-decreasing.
pub fn solve_projected_gradient(
    sys: &LtiSystem,
    metric: &MetricSpec,
    bud: &Budgets,
    grid: &TimeGrid,
    opts: &SolverOptions,
) -> Result<SolverReport> {
    opts.validate()?;
    let prob = Problem::new(sys, metric, bud, grid)?;
    let set = prob.feasible_set();
    let (p, n) = (prob.nodes(), grid.intervals());

    // uniform feasible start
    let t = grid.horizon();
    let level = |j: usize| 1.0_f64.min(bud.alpha[j] / t).min(bud.beta as f64 / p as f64);
    let start = DMatrix::from_fn(p, n, |j, _| level(j));
    let mut best = ascend(&prob, &set, start, opts)?;

    if opts.restarts > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        for _ in 0..opts.restarts {
            let raw = DMatrix::from_fn(p, n, |_, _| rng.random::<f64>());
            let (start, _) = set.project(&raw);
            let run = ascend(&prob, &set, start, opts)?;
            if run.objective > best.objective {
                best = run;
            }
        }
    }

    let (_, grad, _) = prob.linearize(&best.values)?;
    let scores = prob.table().interval_switching(&grad);
    let fit = fit_thresholds(&scores, bud, grid, opts.threshold_bisection_tol);
    let mut stats = best.stats;
    stats.ties = fit.selection.ties;
    let schedule = prob.schedule(best.values)?;
    prob.finish(Method::ProjectedGradient, schedule, fit.thresholds, opts, stats)
}

fn ascend(prob: &Problem<'_>, set: &FeasibleSet, start: DMatrix<f64>, opts: &SolverOptions) -> Result<Run> {
    let tol = opts.convergence_tol;
    let mut values = start;
    let mut objective = prob.objective(&values)?;
    let mut stats = RunStats {
        trace: alloc::vec![objective],
        ..RunStats::default()
    };
    let mut step = match opts.step_size {
        StepSize::Adaptive => 1.0,
        StepSize::Fixed(s) => s,
    };

    while stats.iterations < opts.max_iters {
        stats.iterations += 1;
        let (_, grad, repeated) = prob.linearize(&values)?;
        stats.multiplicity_warning |= repeated;
        let slope = prob.table().sensitivities(&grad);
        let scale = slope.amax();
        if scale == 0.0 {
            stats.converged = true;
            break;
        }
        let direction = slope / scale;

        // stationarity: the unit-step projected gradient vanishes
        let (probe, _) = set.project(&(&values + &direction));
        if (&probe - &values).amax() <= tol {
            stats.converged = true;
            break;
        }

        let mut trial_step = match opts.step_size {
            StepSize::Adaptive => (2.0 * step).min(MAX_STEP),
            StepSize::Fixed(s) => s,
        };
        let mut accepted = None;
        while trial_step >= MIN_STEP {
            let (trial, _) = set.project(&(&values + &direction * trial_step));
            let value = prob.objective(&trial)?;
            if value > objective {
                accepted = Some((trial, value));
                break;
            }
            trial_step *= 0.5;
        }
        let Some((trial, value)) = accepted else {
            // no ascent along the projected arc
            stats.converged = true;
            break;
        };
        step = trial_step;
        let gain = value - objective;
        values = trial;
        objective = value;
        stats.trace.push(objective);
        if gain <= tol * (1.0 + objective.abs()) && (&probe - &values).amax() <= libm::sqrt(tol) {
            stats.converged = true;
            break;
        }
    }
    Ok(Run {
        values,
        objective,
        stats,
    })
}
