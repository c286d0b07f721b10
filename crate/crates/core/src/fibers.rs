//! Fast fiber frames: the span of the fast basis columns `A_1^(q)` taken on
//! a CSP manifold, and the largest principal angle between two frames.

use alloc::format;

use crate::engine::BasisStack;
use crate::error::{CspError, Result};
use crate::manifold::CspmTable;
use crate::system::{Matrix, StatePoint, Vector};

/// Smallest admissible singular value of a column-normalized frame.
pub const MIN_FRAME_SIGMA: f64 = 1e-8;

/// Which manifold the fast columns are evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalPolicy {
    /// The order-`q` manifold.
    #[default]
    Current,
    /// The order-`q-1` manifold.
    Previous,
}

impl EvalPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Current => "current",
            Self::Previous => "previous",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "current" => Ok(Self::Current),
            "previous" => Ok(Self::Previous),
            other => Err(CspError::InvalidParameters(format!(
                "unknown evaluation policy `{other}` (expected current or previous)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiberFrame {
    pub base: StatePoint,
    /// `(m+n) x n`, unnormalized.
    pub columns: Matrix,
    pub order: usize,
    pub policy: EvalPolicy,
}

fn normalized(frame: &Matrix) -> Result<Matrix> {
    let mut out = frame.clone();
    for mut col in out.column_iter_mut() {
        let norm = col.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(CspError::DegenerateFrame { sigma_min: 0.0 });
        }
        col /= norm;
    }
    let sigma_min = out.clone().singular_values().min();
    if sigma_min <= MIN_FRAME_SIGMA {
        return Err(CspError::DegenerateFrame { sigma_min });
    }
    Ok(out)
}

/// Fast columns of `basis` on the manifold chosen by `policy`.
///
/// `cspm_q` must have the order of `basis`; `cspm_prev` (order `q-1`) is
/// needed for [`EvalPolicy::Previous`] and ignored otherwise.
pub fn extract_cspf(
    basis: &BasisStack,
    cspm_q: &CspmTable,
    cspm_prev: Option<&CspmTable>,
    y: &Vector,
    eps: f64,
    policy: EvalPolicy,
) -> Result<FiberFrame> {
    let q = basis.level();
    if cspm_q.order() != q {
        return Err(CspError::InvalidParameters(format!(
            "basis has level {q}, manifold has order {}",
            cspm_q.order()
        )));
    }
    let table = match policy {
        EvalPolicy::Current => cspm_q,
        EvalPolicy::Previous => match cspm_prev {
            Some(prev) if q >= 1 && prev.order() + 1 == q => prev,
            _ => {
                return Err(CspError::InvalidParameters(format!(
                    "previous policy at level {q} needs a level >= 1 basis and its parent manifold"
                )))
            }
        },
    };
    let base = StatePoint::new(y.clone(), table.eval_psi(y)?);
    let columns = basis.fast_columns(&base, eps)?;
    normalized(&columns)?;
    Ok(FiberFrame {
        base,
        columns,
        order: q,
        policy,
    })
}

fn orthonormal(frame: &Matrix) -> Result<Matrix> {
    Ok(normalized(frame)?.qr().q())
}

/// Largest principal angle between the column spans of `f1` and `f2`.
///
/// Computed as `atan2(sin, cos)` from the projection residual and the
/// cross-Gram matrix, which stays accurate for tiny angles.
pub fn principal_angle(f1: &Matrix, f2: &Matrix) -> Result<f64> {
    if f1.shape() != f2.shape() {
        return Err(CspError::Dimension(format!(
            "frames are {:?} and {:?}",
            f1.shape(),
            f2.shape()
        )));
    }
    let q1 = orthonormal(f1)?;
    let q2 = orthonormal(f2)?;
    let residual = &q2 - &q1 * (q1.transpose() * &q2);
    let sin = residual.singular_values().max();
    let cos = (q1.transpose() * &q2).singular_values().min();
    Ok(libm::atan2(sin, cos))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::StepSchedule;
    use crate::engine::RefinementMode;
    use crate::manifold::{build_cspm, SlowGrid};
    use crate::mmh::{mmh_system, MmhParams};
    use approx::assert_relative_eq;
    use core::f64::consts::FRAC_PI_2;

    fn col(a: f64, b: f64) -> Matrix {
        Matrix::from_column_slice(2, 1, &[a, b])
    }

    #[test]
    fn angle_examples() {
        assert!(principal_angle(&col(0.0, 1.0), &col(0.0, 1.0)).unwrap() < 1e-15);
        assert_relative_eq!(
            principal_angle(&col(0.0, 1.0), &col(1.0, 0.0)).unwrap(),
            FRAC_PI_2,
            epsilon = 1e-15
        );
        let theta = principal_angle(&col(0.0, 1.0), &col(-0.075, 0.98125)).unwrap();
        assert_relative_eq!(theta, libm::atan(0.075 / 0.98125), epsilon = 1e-15);
        assert!((theta - 0.07631).abs() < 1e-4);
        assert_relative_eq!(
            principal_angle(&col(1.0, 1e-9), &col(1.0, 0.0)).unwrap(),
            1e-9,
            max_relative = 1e-6
        );
    }

    #[test]
    fn angle_between_planes() {
        let a = Matrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let t: f64 = 0.3;
        let b = Matrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, t.cos(), t.sin()]);
        assert_relative_eq!(principal_angle(&a, &b).unwrap(), t, epsilon = 1e-14);
        assert_relative_eq!(principal_angle(&b, &a).unwrap(), t, epsilon = 1e-14);
    }

    #[test]
    fn degenerate_frames_are_rejected() {
        let flat = Matrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        assert!(matches!(
            principal_angle(&flat, &flat),
            Err(CspError::DegenerateFrame { .. })
        ));
        assert!(principal_angle(&col(0.0, 0.0), &col(1.0, 0.0)).is_err());
        assert!(principal_angle(&col(0.0, 1.0), &Matrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn mmh_frames() {
        let sys = mmh_system(&MmhParams::default());
        let grid = SlowGrid::line(0.5, 2.0, 7).unwrap();
        let y = Vector::from_element(1, 1.0);

        let b0 = BasisStack::chain(&sys, 0, RefinementMode::TwoStep, StepSchedule::default()).unwrap();
        let t0 = build_cspm(&sys, &b0, &grid, 0.01).unwrap();
        for v in [0.5, 1.25, 2.0] {
            let f = extract_cspf(&b0, &t0, None, &Vector::from_element(1, v), 0.01, EvalPolicy::Current).unwrap();
            assert_eq!(f.columns, col(0.0, 1.0));
        }

        let b1 = BasisStack::chain(&sys, 1, RefinementMode::TwoStep, StepSchedule::default()).unwrap();
        let t1 = build_cspm(&sys, &b1, &grid, 0.01).unwrap();
        let f = extract_cspf(&b1, &t1, t1.parent(), &y, 0.01, EvalPolicy::Current).unwrap();
        // Slow entry -eps*(a - lambda)/a, fast entry 1 - 0.1875*eps + O(eps^2).
        assert_relative_eq!(f.columns[(0, 0)], -0.0075, epsilon = 1e-12);
        assert!((f.columns[(1, 0)] - (1.0 - 0.001875)).abs() < 1e-5);
        assert_eq!(f.order, 1);
        let prev = extract_cspf(&b1, &t1, t1.parent(), &y, 0.01, EvalPolicy::Previous).unwrap();
        assert_eq!(prev.base.z[0], 0.5);
        assert_relative_eq!(prev.columns[(1, 0)], 0.998125, epsilon = 1e-12);
        assert!(extract_cspf(&b1, &t1, None, &y, 0.01, EvalPolicy::Previous).is_err());
        assert!(extract_cspf(&b0, &t1, None, &y, 0.01, EvalPolicy::Current).is_err());

        for q in 0..=2 {
            let b = BasisStack::chain(&sys, q, RefinementMode::TwoStep, StepSchedule::default()).unwrap();
            let t = build_cspm(&sys, &b, &grid, 0.0).unwrap();
            let f = extract_cspf(&b, &t, None, &y, 0.0, EvalPolicy::Current).unwrap();
            assert!((f.columns.clone() - col(0.0, 1.0)).amax() < 1e-14, "{}", f.columns);
        }
    }

    #[test]
    fn policy_names() {
        assert_eq!(EvalPolicy::from_name("previous").unwrap(), EvalPolicy::Previous);
        assert_eq!(EvalPolicy::Current.name(), "current");
        assert!(EvalPolicy::from_name("next").is_err());
    }
}
