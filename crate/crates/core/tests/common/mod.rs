#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsegram_core::nalgebra::{DMatrix, DVector};
use sparsegram_core::{Budgets, LtiSystem, Schedule, TimeGrid};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Random drift with `||A||_2 * T <= norm_times_t`; `stable` shifts the
/// spectrum into the open left half-plane.
pub fn random_drift(rng: &mut ChaCha8Rng, n: usize, horizon: f64, norm_times_t: f64, stable: bool) -> DMatrix<f64> {
    let mut a = uniform_matrix(rng, n, n);
    if stable {
        let shift = a.norm() + 0.1;
        a -= DMatrix::identity(n, n) * shift;
    }
    let norm = a.clone().svd(false, false).singular_values.max();
    let target = rng.random_range(0.2..1.0) * norm_times_t / horizon;
    if norm > 0.0 {
        a *= target / norm;
    }
    a
}

pub fn random_system(rng: &mut ChaCha8Rng, n: usize, p: usize, horizon: f64, norm_times_t: f64, stable: bool) -> LtiSystem {
    let a = random_drift(rng, n, horizon, norm_times_t, stable);
    let b = uniform_matrix(rng, n, p);
    LtiSystem::new(a, b, horizon).unwrap()
}

pub fn random_binary(rng: &mut ChaCha8Rng, p: usize, grid: TimeGrid) -> Schedule {
    let v = DMatrix::from_fn(p, grid.intervals(), |_, _| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
    Schedule::new(v, grid).unwrap()
}

pub fn random_fractional(rng: &mut ChaCha8Rng, p: usize, grid: TimeGrid, lo: f64, hi: f64) -> Schedule {
    let v = DMatrix::from_fn(p, grid.intervals(), |_, _| rng.random_range(lo..hi));
    Schedule::new(v, grid).unwrap()
}

/// Budgets that are whole multiples of `dt`, so that binary schedules can
/// exhaust them exactly.
pub fn random_grid_budgets(rng: &mut ChaCha8Rng, p: usize, grid: &TimeGrid) -> Budgets {
    let n = grid.intervals();
    let alpha = (0..p)
        .map(|_| rng.random_range(1..=n) as f64 * grid.dt())
        .collect();
    let beta = rng.random_range(1..=p);
    Budgets::new(alpha, beta)
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let m = uniform_matrix(rng, n, n);
    &m * m.transpose() + DMatrix::identity(n, n) * 0.5
}

/// Symmetric positive definite matrix with prescribed ascending spectrum
/// and a random orthonormal eigenbasis.
pub fn spd_with_spectrum(rng: &mut ChaCha8Rng, spectrum: &[f64]) -> DMatrix<f64> {
    let n = spectrum.len();
    let q = uniform_matrix(rng, n, n).qr().q();
    let d = DMatrix::from_diagonal(&DVector::from_vec(spectrum.to_vec()));
    let mut g = &q * d * q.transpose();
    let gt = g.transpose();
    g = (g + gt) * 0.5;
    g
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let m = uniform_matrix(rng, n, n);
    (&m + m.transpose()) * 0.5
}

pub fn double_integrator(horizon: f64) -> LtiSystem {
    LtiSystem::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        horizon,
    )
    .unwrap()
}

pub fn relative_gap(value: f64, reference: f64) -> f64 {
    (value - reference).abs() / (1.0 + reference.abs())
}
