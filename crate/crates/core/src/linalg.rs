//! Dense linear-algebra helpers: matrix exponential, symmetric eigen
//! decomposition with sorted output, and a few norms.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.539398330063230e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068e0;
const THETA_13: f64 = 5.371920351148152e0;

const PADE_3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE_5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE_7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE_9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE_13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Induced 1-norm (maximum absolute column sum).
pub fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// Frobenius norm of `m - m^T`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).norm()
}

/// Replaces `m` by `(m + m^T) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Matrix exponential by scaling and squaring with a diagonal Padé
/// approximant of degree 3, 5, 7, 9 or 13, chosen from the 1-norm.
pub fn expm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            field: "M",
            expected: alloc::format!("square matrix"),
            found: alloc::format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    if !all_finite(m) {
        return Err(Error::NonFinite { field: "M" });
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let norm = one_norm(m);
    let ident = DMatrix::<f64>::identity(n, n);

    for (theta, coeffs) in [
        (THETA_3, &PADE_3[..]),
        (THETA_5, &PADE_5[..]),
        (THETA_7, &PADE_7[..]),
        (THETA_9, &PADE_9[..]),
    ] {
        if norm <= theta {
            return pade_low(m, coeffs, &ident);
        }
    }

    let squarings = if norm > THETA_13 {
        libm::ceil(libm::log2(norm / THETA_13)).max(0.0) as i32
    } else {
        0
    };
    let scaled = m * libm::exp2(-(squarings as f64));
    let mut result = pade_13(&scaled, &ident)?;
    for _ in 0..squarings {
        result = &result * &result;
    }
    Ok(result)
}

fn pade_low(m: &DMatrix<f64>, b: &[f64], ident: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m2 = m * m;
    let mut power = ident.clone();
    let mut odd = ident * b[1];
    let mut even = ident * b[0];
    let degree = b.len() - 1;
    let mut k = 2;
    while k <= degree {
        power = &power * &m2;
        even += &power * b[k];
        if k + 1 <= degree {
            odd += &power * b[k + 1];
        }
        k += 2;
    }
    let u = m * odd;
    solve_pade(&even, &u)
}

fn pade_13(m: &DMatrix<f64>, ident: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let b = &PADE_13;
    let m2 = m * m;
    let m4 = &m2 * &m2;
    let m6 = &m4 * &m2;
    let inner_u = &m6 * b[13] + &m4 * b[11] + &m2 * b[9];
    let u = m * (&m6 * inner_u + &m6 * b[7] + &m4 * b[5] + &m2 * b[3] + ident * b[1]);
    let inner_v = &m6 * b[12] + &m4 * b[10] + &m2 * b[8];
    let v = &m6 * inner_v + &m6 * b[6] + &m4 * b[4] + &m2 * b[2] + ident * b[0];
    solve_pade(&v, &u)
}

/// Solves `(V - U) R = (V + U)`.
fn solve_pade(v: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let lhs = v - u;
    let rhs = v + u;
    lhs.lu().solve(&rhs).ok_or(Error::SingularSolve)
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending and
/// eigenvectors as the matching columns.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut vals: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals
}
