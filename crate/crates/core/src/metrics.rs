//! Scalar controllability metrics `K(G)` and their matrix gradients.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, sym_eigen, symmetrize};

pub const DEFAULT_LOG_DET_EPSILON: f64 = 1e-8;
pub const DEFAULT_EIG_GAP_TOL: f64 = 1e-8;
const ASYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MetricKind {
    Trace,
    LogDet,
    MinEig,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Trace => "trace",
            MetricKind::LogDet => "log_det",
            MetricKind::MinEig => "min_eig",
        }
    }

    /// Whether `K` is differentiable everywhere on the PSD cone (with the
    /// log-det regularization in place).
    pub fn is_smooth(self) -> bool {
        !matches!(self, MetricKind::MinEig)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricSpec {
    pub kind: MetricKind,
    /// Regularization `G + eps I` for `log_det`.
    pub epsilon: f64,
    /// Relative gap under which the two smallest eigenvalues are treated as
    /// a repeated eigenvalue.
    pub eig_gap_tol: f64,
}

impl MetricSpec {
    pub fn new(kind: MetricKind) -> Self {
        Self {
            kind,
            epsilon: DEFAULT_LOG_DET_EPSILON,
            eig_gap_tol: DEFAULT_EIG_GAP_TOL,
        }
    }

    pub fn trace() -> Self {
        Self::new(MetricKind::Trace)
    }

    pub fn log_det(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::new(MetricKind::LogDet)
        }
    }

    pub fn min_eig() -> Self {
        Self::new(MetricKind::MinEig)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !(self.eig_gap_tol >= 0.0) {
            return Err(Error::InvalidOption(
                "metric epsilon and eig_gap_tol must be nonnegative".into(),
            ));
        }
        if self.kind == MetricKind::LogDet && self.epsilon <= 0.0 {
            return Err(Error::InvalidOption("log_det requires epsilon > 0".into()));
        }
        Ok(())
    }

    /// `K(G)`.
    pub fn evaluate(&self, g: &DMatrix<f64>) -> Result<f64> {
        check_symmetric(g)?;
        match self.kind {
            MetricKind::Trace => Ok(g.trace()),
            MetricKind::LogDet => {
                let shifted = self.shifted(g);
                match shifted.clone().cholesky() {
                    Some(chol) => Ok(2.0 * chol.l().diagonal().iter().map(|d| libm::log(*d)).sum::<f64>()),
                    None => {
                        let (values, _) = sym_eigen(&shifted);
                        if values[0] <= 0.0 {
                            return Err(Error::NotPositiveDefinite);
                        }
                        Ok(values.iter().map(|l| libm::log(*l)).sum())
                    }
                }
            }
            MetricKind::MinEig => Ok(sym_eigen(g).0[0]),
        }
    }

    /// `dK/dG`, symmetric by construction.
    pub fn gradient(&self, g: &DMatrix<f64>) -> Result<MetricGradient> {
        check_symmetric(g)?;
        let n = g.nrows();
        match self.kind {
            MetricKind::Trace => Ok(MetricGradient {
                matrix: DMatrix::identity(n, n),
                multiplicity_warning: false,
            }),
            MetricKind::LogDet => {
                let shifted = self.shifted(g);
                let mut inv = match shifted.clone().cholesky() {
                    Some(chol) => chol.inverse(),
                    None => {
                        let (values, vectors) = sym_eigen(&shifted);
                        if values[0] <= 0.0 {
                            return Err(Error::NotPositiveDefinite);
                        }
                        let inv_diag = DMatrix::from_diagonal(&values.map(|l| 1.0 / l));
                        &vectors * inv_diag * vectors.transpose()
                    }
                };
                symmetrize(&mut inv);
                Ok(MetricGradient {
                    matrix: inv,
                    multiplicity_warning: false,
                })
            }
            MetricKind::MinEig => {
                let (values, vectors) = sym_eigen(g);
                let u = vectors.column(0);
                let mut proj = &u * u.transpose();
                symmetrize(&mut proj);
                let scale = values.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
                let repeated = n > 1 && (values[1] - values[0]) <= self.eig_gap_tol * scale;
                Ok(MetricGradient {
                    matrix: proj,
                    multiplicity_warning: repeated,
                })
            }
        }
    }

    fn shifted(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        let n = g.nrows();
        g + DMatrix::<f64>::identity(n, n) * self.epsilon
    }
}

/// Gradient (or, for `min_eig`, a subgradient) of a metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricGradient {
    pub matrix: DMatrix<f64>,
    /// Set when `min_eig` is evaluated at a (numerically) repeated smallest
    /// eigenvalue, where `u u^T` is only one element of the subdifferential.
    pub multiplicity_warning: bool,
}

fn check_symmetric(g: &DMatrix<f64>) -> Result<()> {
    if !g.is_square() || g.nrows() == 0 {
        return Err(Error::DimensionMismatch {
            field: "G",
            expected: "nonempty square matrix".into(),
            found: alloc::format!("{}x{}", g.nrows(), g.ncols()),
        });
    }
    let tol = ASYMMETRY_TOL * g.norm();
    let asym = asymmetry(g);
    if asym > tol {
        return Err(Error::Asymmetric {
            asymmetry: asym,
            tolerance: tol,
        });
    }
    Ok(())
}

pub fn evaluate(metric: &MetricSpec, g: &DMatrix<f64>) -> Result<f64> {
    metric.evaluate(g)
}

pub fn gradient(metric: &MetricSpec, g: &DMatrix<f64>) -> Result<MetricGradient> {
    metric.gradient(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn diag(d: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(d.to_vec()))
    }

    #[test]
    fn trace_value_and_gradient() {
        let m = MetricSpec::trace();
        assert_eq!(m.evaluate(&diag(&[1.0, 2.0, 3.0])).unwrap(), 6.0);
        let g = m.gradient(&diag(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(g.matrix, DMatrix::identity(3, 3));
    }

    #[test]
    fn log_det_value_and_gradient() {
        let m = MetricSpec::log_det(1e-300);
        assert_relative_eq!(m.evaluate(&diag(&[1.0, core::f64::consts::E])).unwrap(), 1.0, epsilon = 1e-15);
        let g = MetricSpec::log_det(1e-12).gradient(&diag(&[1.0, 1.0])).unwrap();
        assert_relative_eq!(g.matrix, DMatrix::identity(2, 2), epsilon = 1e-11);
    }

    #[test]
    fn log_det_of_zero_is_regularized() {
        let m = MetricSpec::log_det(1e-8);
        let v = m.evaluate(&DMatrix::zeros(2, 2)).unwrap();
        assert_relative_eq!(v, 2.0 * libm::log(1e-8), max_relative = 1e-14);
        let g = m.gradient(&DMatrix::zeros(2, 2)).unwrap();
        assert_relative_eq!(g.matrix, DMatrix::identity(2, 2) * 1e8, max_relative = 1e-12);
    }

    #[test]
    fn min_eig_value_and_gradient() {
        let m = MetricSpec::min_eig();
        assert_relative_eq!(m.evaluate(&diag(&[0.1, 5.0])).unwrap(), 0.1);
        let g = m.gradient(&diag(&[0.1, 5.0])).unwrap();
        assert_relative_eq!(g.matrix, diag(&[1.0, 0.0]), epsilon = 1e-15);
        assert!(!g.multiplicity_warning);
    }

    #[test]
    fn min_eig_flags_multiplicity() {
        let g = MetricSpec::min_eig().gradient(&diag(&[2.0, 2.0, 3.0])).unwrap();
        assert!(g.multiplicity_warning);
    }

    #[test]
    fn asymmetric_input_rejected() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        for m in [MetricSpec::trace(), MetricSpec::log_det(1e-8), MetricSpec::min_eig()] {
            assert!(matches!(m.evaluate(&g), Err(Error::Asymmetric { .. })));
            assert!(matches!(m.gradient(&g), Err(Error::Asymmetric { .. })));
        }
    }

    #[test]
    fn log_det_requires_positive_epsilon() {
        assert!(MetricSpec::log_det(0.0).validate().is_err());
        assert!(MetricSpec::log_det(1e-8).validate().is_ok());
        assert!(MetricSpec { epsilon: 0.0, ..MetricSpec::trace() }.validate().is_ok());
    }
}
