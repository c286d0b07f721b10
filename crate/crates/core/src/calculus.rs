//! Directional derivatives of point-dependent matrices, their time
//! derivatives along the flow, and Lie brackets.
//!
//! Matrices act column by column: `(DF) v` is the derivative of every
//! column of `F` in the direction `v`.

use alloc::format;
use alloc::sync::Arc;
use core::fmt;

use crate::error::{CspError, Result};
use crate::system::{eval_g, eval_jacobian, fd_base_step, Matrix, StatePoint, SystemDefinition, Vector};

pub type MatrixEvaluator = dyn Fn(&StatePoint, f64) -> Result<Matrix> + Send + Sync;

/// Finite-difference step for a field whose evaluation already contains
/// `depth` nested numerical derivatives.
///
/// Each nesting level costs roughly half the significant digits of the
/// inner quotient, so the step grows with depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    /// `base^(1/2^depth)`: depth 0 uses `base`, depth 1 its square root.
    SquareRoot { base: f64 },
    /// `base * growth^depth`.
    Geometric { base: f64, growth: f64 },
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self::SquareRoot { base: fd_base_step() }
    }
}

impl StepSchedule {
    pub fn step(&self, depth: usize) -> f64 {
        match *self {
            Self::SquareRoot { base } => libm::pow(base, libm::pow(0.5, depth as f64)),
            Self::Geometric { base, growth } => base * libm::pow(growth, depth as f64),
        }
    }
}

/// A matrix-valued function of the state and `eps`.
#[derive(Clone)]
pub struct MatrixField {
    evaluator: Arc<MatrixEvaluator>,
    rows: usize,
    cols: usize,
    step: f64,
    constant: bool,
}

impl fmt::Debug for MatrixField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MatrixField")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("step", &self.step)
            .field("constant", &self.constant)
            .finish()
    }
}

impl MatrixField {
    pub fn new<F>(rows: usize, cols: usize, step: f64, evaluator: F) -> Self
    where
        F: Fn(&StatePoint, f64) -> Result<Matrix> + Send + Sync + 'static,
    {
        assert!(step > 0.0, "finite-difference step must be positive");
        Self {
            evaluator: Arc::new(evaluator),
            rows,
            cols,
            step,
            constant: false,
        }
    }

    /// A field that ignores its arguments; derivatives are exact zeros.
    pub fn constant(value: Matrix) -> Self {
        let (rows, cols) = value.shape();
        Self {
            evaluator: Arc::new(move |_x: &StatePoint, _eps: f64| Ok(value.clone())),
            rows,
            cols,
            step: fd_base_step(),
            constant: true,
        }
    }

    pub fn with_step(mut self, step: f64) -> Self {
        assert!(step > 0.0, "finite-difference step must be positive");
        self.step = step;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn recommended_step(&self) -> f64 {
        self.step
    }

    pub fn is_constant(&self) -> bool {
        self.constant
    }

    pub fn evaluate(&self, x: &StatePoint, eps: f64) -> Result<Matrix> {
        let value = (self.evaluator)(x, eps)?;
        if value.shape() != (self.rows, self.cols) {
            return Err(CspError::Dimension(format!(
                "field evaluated to {:?}, declared {}x{}",
                value.shape(),
                self.rows,
                self.cols
            )));
        }
        Ok(value)
    }
}

fn offset(x: &StatePoint, dir: &Vector, h: f64) -> StatePoint {
    StatePoint::from_stacked(x.y.len(), &(x.stacked() + dir * h))
}

fn central_quotient(field: &MatrixField, x: &StatePoint, dir: &Vector, h: f64, eps: f64) -> Result<Matrix> {
    let plus = field.evaluate(&offset(x, dir, h), eps)?;
    let minus = field.evaluate(&offset(x, dir, -h), eps)?;
    let q = (plus - minus) / (2.0 * h);
    if q.iter().all(|v| v.is_finite()) {
        Ok(q)
    } else {
        Err(CspError::Differentiation {
            point: x.to_vec(),
            reason: format!("non-finite difference quotient with step {h:e}"),
        })
    }
}

/// `(DF)(x) v` by a central difference along `v/|v|`, rescaled by `|v|`.
///
/// A failed or non-finite quotient is retried once with half the step.
pub fn directional_derivative(field: &MatrixField, x: &StatePoint, v: &Vector, eps: f64) -> Result<Matrix> {
    if v.len() != x.y.len() + x.z.len() {
        return Err(CspError::Dimension(format!(
            "direction has {} entries, state has {}",
            v.len(),
            x.y.len() + x.z.len()
        )));
    }
    let norm = v.norm();
    if !norm.is_finite() {
        return Err(CspError::Differentiation {
            point: x.to_vec(),
            reason: "direction is not finite".into(),
        });
    }
    if field.is_constant() || norm == 0.0 {
        return Ok(Matrix::zeros(field.rows, field.cols));
    }
    let dir = v / norm;
    let h = field.recommended_step();
    let quotient = match central_quotient(field, x, &dir, h, eps) {
        Ok(q) => q,
        Err(_) => central_quotient(field, x, &dir, 0.5 * h, eps).map_err(|e| CspError::Differentiation {
            point: x.to_vec(),
            reason: format!("step reduction did not help: {e}"),
        })?,
    };
    Ok(quotient * norm)
}

/// `dF/dt = (DF) g` along the flow of `sys`.
pub fn field_time_derivative(sys: &SystemDefinition, field: &MatrixField, x: &StatePoint, eps: f64) -> Result<Matrix> {
    if field.is_constant() {
        return Ok(Matrix::zeros(field.rows, field.cols));
    }
    let g = eval_g(sys, x, eps)?;
    directional_derivative(field, x, &g, eps)
}

/// Column-wise Lie bracket `[A, g] = (Dg) A - (DA) g`.
pub fn lie_bracket_columns(sys: &SystemDefinition, field: &MatrixField, x: &StatePoint, eps: f64) -> Result<Matrix> {
    if field.rows() != sys.dim() {
        return Err(CspError::Dimension(format!(
            "field has {} rows, system dimension is {}",
            field.rows(),
            sys.dim()
        )));
    }
    let jac = eval_jacobian(sys, x, eps)?;
    let a = field.evaluate(x, eps)?;
    let transport = field_time_derivative(sys, field, x, eps)?;
    Ok(jac * a - transport)
}

/// `[a, g] = (Dg) a - (Da) g` for a single-column field `a`.
pub fn lie_bracket(sys: &SystemDefinition, a: &MatrixField, x: &StatePoint, eps: f64) -> Result<Vector> {
    if a.cols() != 1 {
        return Err(CspError::Dimension(format!(
            "expected a single column, got {}",
            a.cols()
        )));
    }
    Ok(lie_bracket_columns(sys, a, x, eps)?.column(0).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmh::{mmh_a1_general, mmh_system, MmhParams};
    use crate::system::BoxDomain;
    use crate::systems::linear2d;
    use approx::assert_relative_eq;

    fn identity_field(dim: usize) -> MatrixField {
        MatrixField::new(dim, 1, 1e-5, |x: &StatePoint, _eps| {
            Ok(Matrix::from_column_slice(x.to_vec().len(), 1, &x.to_vec()))
        })
    }

    fn linear_system(m: [f64; 4]) -> SystemDefinition {
        SystemDefinition::new(
            "lin",
            1,
            1,
            // stacked g = M x with the slow row divided back by eps = 1
            move |y: &Vector, z: &Vector, _e| Vector::from_element(1, m[0] * y[0] + m[1] * z[0]),
            move |y: &Vector, z: &Vector, _e| Vector::from_element(1, m[2] * y[0] + m[3] * z[0]),
            BoxDomain::cube(1, -2.0, 2.0).unwrap(),
            BoxDomain::cube(1, -2.0, 2.0).unwrap(),
        )
        .unwrap()
        .with_jacobian(move |_y, _z, _e| Matrix::from_row_slice(2, 2, &m))
    }

    #[test]
    fn identity_field_derivative_is_direction() {
        let f = identity_field(2);
        let x = StatePoint::from_slices(&[0.3], &[-1.2]);
        let v = Vector::from_column_slice(&[2.0, -0.5]);
        let d = directional_derivative(&f, &x, &v, 0.1).unwrap();
        assert_relative_eq!(d.column(0).into_owned(), v, epsilon = 1e-9);
    }

    #[test]
    fn constant_field_is_exactly_zero() {
        let f = MatrixField::constant(Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let x = StatePoint::from_slices(&[1.0], &[0.5]);
        let d = directional_derivative(&f, &x, &Vector::from_column_slice(&[3.0, 4.0]), 0.0).unwrap();
        assert_eq!(d, Matrix::zeros(2, 2));
        let sys = mmh_system(&MmhParams::default());
        assert_eq!(field_time_derivative(&sys, &f, &x, 0.3).unwrap(), Matrix::zeros(2, 2));
    }

    #[test]
    fn polynomial_field_derivative() {
        let f = MatrixField::new(2, 1, 1e-5, |x: &StatePoint, _e| {
            Ok(Matrix::from_column_slice(2, 1, &[x.z[0], x.y[0] * x.y[0]]))
        });
        let d = directional_derivative(
            &f,
            &StatePoint::from_slices(&[1.0], &[2.0]),
            &Vector::from_column_slice(&[1.0, 0.0]),
            0.0,
        )
        .unwrap();
        assert_relative_eq!(d[(0, 0)], 0.0, epsilon = 1e-10);
        assert_relative_eq!(d[(1, 0)], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn central_difference_is_second_order() {
        let cube = |x: &StatePoint, _e: f64| {
            Ok(Matrix::from_element(
                1,
                1,
                libm::pow(x.y[0], 3.0) + x.z[0] * x.z[0] * x.y[0],
            ))
        };
        let x = StatePoint::from_slices(&[0.7], &[1.1]);
        let v = Vector::from_column_slice(&[0.6, 0.8]);
        let exact = 3.0 * 0.49 * 0.6 + (1.21 * 0.6 + 2.0 * 1.1 * 0.7 * 0.8);
        let err = |h: f64| {
            let f = MatrixField::new(1, 1, h, cube);
            (directional_derivative(&f, &x, &v, 0.0).unwrap()[(0, 0)] - exact).abs()
        };
        let ratio = err(0.02) / err(0.01);
        assert!(ratio >= 3.5, "{ratio}");
    }

    #[test]
    fn time_derivative_of_identity_is_the_field() {
        let sys = mmh_system(&MmhParams::default());
        let x = StatePoint::from_slices(&[0.8], &[0.9]);
        let d = field_time_derivative(&sys, &identity_field(2), &x, 0.2).unwrap();
        let g = eval_g(&sys, &x, 0.2).unwrap();
        assert_relative_eq!(d.column(0).into_owned(), g, epsilon = 1e-9);
    }

    #[test]
    fn time_derivative_of_first_basis_vanishes_with_eps() {
        let p = MmhParams::default();
        let sys = mmh_system(&p);
        let x = StatePoint::from_slices(&[1.0], &[0.5]);
        let size = |eps: f64| {
            let f = MatrixField::new(2, 2, 1e-5, move |x: &StatePoint, e| {
                Ok(mmh_a1_general(x.y[0], x.z[0], &p, e))
            });
            field_time_derivative(&sys, &f, &x, eps).unwrap().norm()
        };
        let ratio = size(1e-2) / size(1e-3);
        assert!((ratio - 10.0).abs() < 0.5, "{ratio}");
        assert!(size(0.0) == 0.0);
    }

    #[test]
    fn lie_bracket_examples() {
        let sys = mmh_system(&MmhParams::default());
        let x = StatePoint::from_slices(&[1.0], &[0.5]);
        let a = MatrixField::constant(Matrix::from_column_slice(2, 1, &[0.0, 1.0]));
        let b = lie_bracket(&sys, &a, &x, 0.01).unwrap();
        assert_relative_eq!(b, Vector::from_column_slice(&[0.015, -2.0]), epsilon = 1e-15);

        let eps = 0.05;
        let sys_g = sys.clone();
        let g_field = MatrixField::new(2, 1, 1e-5, move |x: &StatePoint, e| {
            let g = eval_g(&sys_g, x, e)?;
            Ok(Matrix::from_column_slice(2, 1, g.as_slice()))
        });
        let self_bracket = lie_bracket(&sys, &g_field, &StatePoint::from_slices(&[0.7], &[0.2]), eps).unwrap();
        assert!(self_bracket.norm() < 1e-9, "{self_bracket}");

        let lin = linear2d();
        let a = Vector::from_column_slice(&[0.3, -1.0]);
        let bracket = lie_bracket(
            &lin,
            &MatrixField::constant(Matrix::from_column_slice(2, 1, a.as_slice())),
            &x,
            0.1,
        )
        .unwrap();
        let m = Matrix::from_row_slice(2, 2, &[-0.1, 0.0, 0.1, -1.0]);
        assert_eq!(bracket, m * a);
    }

    #[test]
    fn lie_bracket_antisymmetric_for_linear_fields() {
        let pm = [0.3, -1.0, 0.5, 2.0];
        let gm = [-0.2, 0.7, 1.1, -1.5];
        let x = StatePoint::from_slices(&[0.4], &[-0.9]);
        let as_field = |m: [f64; 4]| {
            MatrixField::new(2, 1, 1e-4, move |x: &StatePoint, _e| {
                Ok(Matrix::from_row_slice(2, 2, &m) * Matrix::from_column_slice(2, 1, &x.to_vec()))
            })
        };
        let ag = lie_bracket(&linear_system(gm), &as_field(pm), &x, 1.0).unwrap();
        let ga = lie_bracket(&linear_system(pm), &as_field(gm), &x, 1.0).unwrap();
        assert!((ag + ga).norm() < 1e-8);
    }

    #[test]
    fn failed_offsets_retry_then_error() {
        let f = MatrixField::new(1, 1, 1e-3, |x: &StatePoint, _e| {
            if x.y[0] > 1.0005 {
                Ok(Matrix::from_element(1, 1, f64::NAN))
            } else {
                Ok(Matrix::from_element(1, 1, 2.0 * x.y[0]))
            }
        });
        let v = Vector::from_column_slice(&[1.0, 0.0]);
        let d = directional_derivative(&f, &StatePoint::from_slices(&[1.0], &[0.0]), &v, 0.0).unwrap();
        assert_relative_eq!(d[(0, 0)], 2.0, epsilon = 1e-9);
        let err = directional_derivative(&f, &StatePoint::from_slices(&[1.0004], &[0.0]), &v, 0.0);
        assert!(matches!(err, Err(CspError::Differentiation { .. })));
    }

    #[test]
    fn step_schedule_grows() {
        let s = StepSchedule::default();
        assert_eq!(s.step(0), fd_base_step());
        assert_eq!(s.step(1), libm::sqrt(fd_base_step()));
        assert!(s.step(2) > s.step(1));
        let g = StepSchedule::Geometric {
            base: 1e-6,
            growth: 10.0,
        };
        assert!((g.step(2) - 1e-4).abs() < 1e-18);
    }
}
