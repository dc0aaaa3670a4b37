use alloc::vec::Vec;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::selection::{best_response, supporting_thresholds};
use super::{fit_thresholds, Method, Problem, RunStats, SolverOptions, SolverReport};
use crate::error::Result;
use crate::metrics::MetricSpec;
use crate::model::{Budgets, LtiSystem, TimeGrid};

struct Run {
    values: DMatrix<f64>,
    objective: f64,
    stats: RunStats,
}

/// Bang-bang self-consistency iteration: propagate the current binary
/// schedule, take the switching scores at its terminal Gramian and select
/// the best response to them under the budgets. Converged when the
/// schedule is itself a best response to its own scores. Scores fed to the next selection are
/// averaged with the previous ones (`damping`) to break 2-cycles.
pub fn solve_fixed_point(
    sys: &LtiSystem,
    metric: &MetricSpec,
    bud: &Budgets,
    grid: &TimeGrid,
    opts: &SolverOptions,
) -> Result<SolverReport> {
    opts.validate()?;
    let prob = Problem::new(sys, metric, bud, grid)?;
    let (p, n) = (prob.nodes(), grid.intervals());

    // greedy start: scores at the full-activation Gramian
    let (_, grad, _) = prob.linearize(&DMatrix::from_element(p, n, 1.0))?;
    let initial = prob.table().interval_switching(&grad);
    let mut best = iterate(&prob, initial.clone(), opts)?;

    if opts.restarts > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let spread = initial.amax().max(f64::MIN_POSITIVE);
        for _ in 0..opts.restarts {
            let jittered = initial.map(|s| s + spread * (rng.random::<f64>() - 0.5));
            let run = iterate(&prob, jittered, opts)?;
            if run.objective > best.objective || (!best.stats.converged && run.stats.converged) {
                best = run;
            }
        }
    }

    let (_, grad, _) = prob.linearize(&best.values)?;
    let scores = prob.table().interval_switching(&grad);
    let tol = opts.threshold_bisection_tol;
    // multipliers supporting the returned schedule itself; when it is not
    // a best response (no fixed point reached) those of the best response
    let fit = supporting_thresholds(&scores, &best.values, bud, grid, tol)
        .unwrap_or_else(|| fit_thresholds(&scores, bud, grid, tol));
    let mut stats = best.stats;
    stats.ties = fit.selection.ties;
    let schedule = prob.schedule(best.values)?;
    prob.finish(Method::FixedPoint, schedule, fit.thresholds, opts, stats)
}

fn iterate(prob: &Problem<'_>, initial_scores: DMatrix<f64>, opts: &SolverOptions) -> Result<Run> {
    let caps: Vec<usize> = (0..prob.nodes())
        .map(|j| prob.bud.max_active_intervals(j, prob.grid.dt()))
        .collect();
    let beta = prob.bud.beta;
    let mut history = initial_scores;
    let mut current = best_response(&history, &caps, beta);
    let mut stats = RunStats::default();
    let mut best: Option<(f64, DMatrix<f64>)> = None;

    while stats.iterations < opts.max_iters {
        stats.iterations += 1;
        let (objective, grad, repeated) = prob.linearize(&current)?;
        stats.multiplicity_warning |= repeated;
        stats.trace.push(objective);
        let scores = prob.table().interval_switching(&grad);
        let own = best_response(&scores, &caps, beta);

        if best.as_ref().map_or(true, |(b, _)| objective > *b) {
            best = Some((objective, current.clone()));
        }
        // a fixed point: the schedule is a best response to its own scores
        let achieved = scores.component_mul(&current).sum();
        let attainable = scores.component_mul(&own).sum();
        if attainable - achieved <= opts.convergence_tol * (1.0 + attainable.abs()) {
            stats.converged = true;
            return Ok(Run {
                values: current,
                objective,
                stats,
            });
        }
        history = &history * opts.damping + scores * (1.0 - opts.damping);
        current = best_response(&history, &caps, beta);
    }

    // no fixed point within the iteration budget: keep the best iterate
    let (objective, values) = best.expect("at least one iteration ran");
    Ok(Run {
        values,
        objective,
        stats,
    })
}
