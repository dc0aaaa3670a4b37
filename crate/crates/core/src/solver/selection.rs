//! Bang-bang selection rule on the grid: in every interval activate the
//! (at most `beta`) nodes with the largest positive adjusted score
//! `s_jk - theta_j`, with per-node thresholds `theta_j >= 0` chosen so the
//! node budgets hold. On a grid the thresholds and the selection are the
//! dual and primal solutions of a transportation problem.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use nalgebra::DMatrix;

use crate::model::{Budgets, TimeGrid};

/// Adjusted scores closer than this count as tied; the lower index wins.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Binary `p x N` activation.
    pub values: DMatrix<f64>,
    /// Intervals whose selection boundary was decided by a tie.
    pub ties: usize,
}

/// Selected nodes of one interval, in pick order, plus whether the
/// boundary of the selection was a tie.
fn select_interval(scores: &DMatrix<f64>, k: usize, thresholds: &[f64], beta: usize) -> (Vec<usize>, bool) {
    let p = scores.nrows();
    let adjusted: Vec<f64> = (0..p).map(|j| scores[(j, k)] - thresholds[j]).collect();
    let mut taken = vec![false; p];
    let mut picked = Vec::with_capacity(beta);
    let mut tie = false;
    for _ in 0..beta {
        let best = (0..p)
            .filter(|&j| !taken[j])
            .map(|j| adjusted[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if !(best > 0.0) {
            break;
        }
        let winner = (0..p)
            .find(|&j| !taken[j] && adjusted[j] >= best - TIE_TOL)
            .expect("maximum is attained");
        taken[winner] = true;
        picked.push(winner);
    }
    // boundary: weakest picked versus strongest left out (or versus zero)
    let weakest_in = picked.last().map(|&j| adjusted[j]);
    let strongest_out = (0..p)
        .filter(|&j| !taken[j])
        .map(|j| adjusted[j])
        .fold(f64::NEG_INFINITY, f64::max);
    if let Some(w) = weakest_in {
        if w <= TIE_TOL || (strongest_out > 0.0 && w - strongest_out <= TIE_TOL) {
            tie = true;
        }
    }
    if picked.len() < beta && strongest_out.abs() <= TIE_TOL {
        tie = true;
    }
    (picked, tie)
}

/// Applies the selection rule for fixed thresholds.
pub fn select(scores: &DMatrix<f64>, thresholds: &[f64], beta: usize) -> Selection {
    let (p, n) = scores.shape();
    let mut values = DMatrix::zeros(p, n);
    let mut ties = 0;
    for k in 0..n {
        let (picked, tie) = select_interval(scores, k, thresholds, beta);
        for j in picked {
            values[(j, k)] = 1.0;
        }
        ties += tie as usize;
    }
    Selection { values, ties }
}

/// Heap entry ordered so the smallest distance pops first.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Label(f64, usize);

impl Eq for Label {}

impl Ord for Label {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Binary maximizer of `sum_jk scores_jk v_jk` over the grid budgets:
/// at most `caps[j]` intervals for node `j` and `beta` nodes per interval.
///
/// This is a maximum-weight bipartite b-matching between nodes and
/// intervals, solved exactly by successive shortest paths on the flow
/// network source -> node -> interval -> sink with Dijkstra on reduced
/// costs. Augmentation stops once no path has positive profit.
pub fn best_response(scores: &DMatrix<f64>, caps: &[usize], beta: usize) -> DMatrix<f64> {
    let (p, n) = scores.shape();
    let source = 0;
    let sink = p + n + 1;
    let size = p + n + 2;
    let row = |j: usize| 1 + j;
    let col = |k: usize| 1 + p + k;

    let mut active = vec![false; p * n];
    let mut row_used = vec![0usize; p];
    let mut col_used = vec![0usize; n];

    // initial potentials: shortest distances in the empty-flow network
    let mut pi = vec![0.0_f64; size];
    for k in 0..n {
        pi[col(k)] = (0..p)
            .filter(|&j| scores[(j, k)] > 0.0)
            .map(|j| -scores[(j, k)])
            .fold(0.0, f64::min);
    }
    pi[sink] = (0..n).map(|k| pi[col(k)]).fold(0.0, f64::min);

    let mut dist = vec![f64::INFINITY; size];
    let mut prev = vec![usize::MAX; size];
    let mut done = vec![false; size];
    let mut heap = BinaryHeap::new();
    loop {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        prev.iter_mut().for_each(|u| *u = usize::MAX);
        done.iter_mut().for_each(|d| *d = false);
        dist[source] = 0.0;
        heap.clear();
        heap.push(Label(0.0, source));

        while let Some(Label(d, u)) = heap.pop() {
            if done[u] || d > dist[u] {
                continue;
            }
            done[u] = true;
            let mut relax = |v: usize, cost: f64, dist: &mut [f64]| {
                let reduced = (cost + pi[u] - pi[v]).max(0.0);
                if dist[u] + reduced < dist[v] {
                    dist[v] = dist[u] + reduced;
                    prev[v] = u;
                    heap.push(Label(dist[v], v));
                }
            };
            if u == source {
                for j in 0..p {
                    if row_used[j] < caps[j] {
                        relax(row(j), 0.0, &mut dist);
                    }
                }
            } else if u <= p {
                let j = u - 1;
                if row_used[j] > 0 {
                    relax(source, 0.0, &mut dist);
                }
                for k in 0..n {
                    if !active[j * n + k] && scores[(j, k)] > 0.0 {
                        relax(col(k), -scores[(j, k)], &mut dist);
                    }
                }
            } else if u < sink {
                let k = u - 1 - p;
                for j in 0..p {
                    if active[j * n + k] {
                        relax(row(j), scores[(j, k)], &mut dist);
                    }
                }
                if col_used[k] < beta {
                    relax(sink, 0.0, &mut dist);
                }
            } else {
                for k in 0..n {
                    if col_used[k] > 0 {
                        relax(col(k), 0.0, &mut dist);
                    }
                }
            }
        }

        if !dist[sink].is_finite() {
            break;
        }
        let reach = dist[sink];
        for v in 0..size {
            pi[v] += dist[v].min(reach);
        }
        // pi[source] stays 0, so pi[sink] is the true cost of the path
        if pi[sink] >= 0.0 {
            break;
        }
        let mut v = sink;
        while v != source {
            let u = prev[v];
            match (u, v) {
                (u, v) if u == source => row_used[v - 1] += 1,
                (u, v) if v == source => row_used[u - 1] -= 1,
                (u, v) if v == sink => col_used[u - 1 - p] += 1,
                (u, v) if u == sink => col_used[v - 1 - p] -= 1,
                (u, v) if u <= p => active[(u - 1) * n + (v - 1 - p)] = true,
                (u, v) => active[(v - 1) * n + (u - 1 - p)] = false,
            }
            v = u;
        }
    }
    DMatrix::from_fn(p, n, |j, k| if active[j * n + k] { 1.0 } else { 0.0 })
}

/// Shortest distances from `src` by Bellman-Ford; `None` on a reachable
/// negative cycle.
fn bellman_ford(size: usize, edges: &[(usize, usize, f64)], src: usize) -> Option<Vec<f64>> {
    let mut dist = vec![f64::INFINITY; size];
    dist[src] = 0.0;
    for round in 0..=size {
        let mut changed = false;
        for &(u, v, w) in edges {
            if dist[u].is_finite() && dist[u] + w < dist[v] {
                dist[v] = dist[u] + w;
                changed = true;
            }
        }
        if !changed {
            return Some(dist);
        }
        if round == size {
            break;
        }
    }
    None
}

/// Range of budget multipliers supporting a binary selection.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdRange {
    /// Componentwise smallest admissible thresholds.
    pub lower: Vec<f64>,
    /// Componentwise largest; infinite when unbounded.
    pub upper: Vec<f64>,
}

impl ThresholdRange {
    /// Midpoint of the range, or the lower end where it is unbounded.
    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| if hi.is_finite() { 0.5 * (lo + hi) } else { lo })
            .collect()
    }
}

/// Thresholds `theta >= 0` (with per-interval multipliers `mu >= 0`) for
/// which the binary selection `values` is optimal for `scores`:
/// `theta_j + mu_k <= s_jk` on active entries, `>= s_jk` on inactive ones,
/// `theta_j = 0` on rows below their cap and `mu_k = 0` on columns below
/// `beta`. The constraints are differences of potentials, so both ends of
/// the admissible box are shortest-path distances. Each constraint is
/// loosened by `slack`. `None` when no multipliers exist, i.e. `values` is
/// not a best response to `scores`.
pub fn threshold_range(
    scores: &DMatrix<f64>,
    values: &DMatrix<f64>,
    caps: &[usize],
    beta: usize,
    slack: f64,
) -> Option<ThresholdRange> {
    let (p, n) = scores.shape();
    // potentials: 0 is the reference, 1..=p are theta, then y_k = -mu_k
    let size = 1 + p + n;
    let theta = |j: usize| 1 + j;
    let y = |k: usize| 1 + p + k;
    // (u, v, c) encodes x_u - x_v <= c
    let mut cons: Vec<(usize, usize, f64)> = Vec::with_capacity(p * n + 2 * (p + n));
    for j in 0..p {
        cons.push((0, theta(j), 0.0));
        let used = (0..n).filter(|&k| values[(j, k)] > 0.5).count();
        if used < caps[j] {
            cons.push((theta(j), 0, 0.0));
        }
    }
    for k in 0..n {
        cons.push((y(k), 0, 0.0));
        let used = (0..p).filter(|&j| values[(j, k)] > 0.5).count();
        if used < beta {
            cons.push((0, y(k), 0.0));
        }
        for j in 0..p {
            let s = scores[(j, k)];
            if values[(j, k)] > 0.5 {
                cons.push((theta(j), y(k), s + slack));
            } else {
                cons.push((y(k), theta(j), -s + slack));
            }
        }
    }

    let upper_edges: Vec<_> = cons.iter().map(|&(u, v, c)| (v, u, c)).collect();
    let upper = bellman_ford(size, &upper_edges, 0)?;
    let lower = bellman_ford(size, &cons, 0)?;
    Some(ThresholdRange {
        lower: (0..p).map(|j| (-lower[theta(j)]).max(0.0)).collect(),
        upper: (0..p).map(|j| upper[theta(j)]).collect(),
    })
}

/// Outcome of the threshold search.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdFit {
    /// Smallest admissible multipliers.
    pub thresholds: Vec<f64>,
    /// Best response to the scores. `ties` counts the intervals where the
    /// selection rule at the central multipliers is ambiguous.
    pub selection: Selection,
    /// Whether multipliers supporting the selection were found.
    pub consistent: bool,
}

fn caps_for(bud: &Budgets, grid: &TimeGrid, p: usize) -> Vec<usize> {
    (0..p).map(|j| bud.max_active_intervals(j, grid.dt())).collect()
}

/// Multipliers supporting an arbitrary binary selection, or `None`.
pub fn supporting_thresholds(
    scores: &DMatrix<f64>,
    values: &DMatrix<f64>,
    bud: &Budgets,
    grid: &TimeGrid,
    tol: f64,
) -> Option<ThresholdFit> {
    let caps = caps_for(bud, grid, scores.nrows());
    let slack = tol * (1.0 + scores.amax());
    let range = threshold_range(scores, values, &caps, bud.beta, slack)?;
    let rule = select(scores, &range.center(), bud.beta);
    let ties = (0..scores.ncols())
        .filter(|&k| {
            let (_, tie) = select_interval(scores, k, &range.center(), bud.beta);
            tie || rule.values.column(k) != values.column(k)
        })
        .count();
    Some(ThresholdFit {
        thresholds: range.lower,
        selection: Selection {
            values: values.clone(),
            ties,
        },
        consistent: true,
    })
}

/// Best response to `scores` under the budgets together with its smallest
/// supporting multipliers `theta_j`; `theta_j = 0` whenever node `j` is
/// below its budget.
pub fn fit_thresholds(scores: &DMatrix<f64>, bud: &Budgets, grid: &TimeGrid, tol: f64) -> ThresholdFit {
    let p = scores.nrows();
    let values = best_response(scores, &caps_for(bud, grid, p), bud.beta);
    supporting_thresholds(scores, &values, bud, grid, tol).unwrap_or(ThresholdFit {
        thresholds: vec![0.0; p],
        selection: Selection { values, ties: 0 },
        consistent: false,
    })
}
