//! Small demo systems with known slow manifolds and fibers.

use alloc::format;

use crate::error::{CspError, Result};
use crate::mmh::{mmh_system, MmhParams};
use crate::system::{BoxDomain, Matrix, StatePoint, SystemDefinition, Vector};

fn unit_boxes() -> (BoxDomain, BoxDomain) {
    (
        BoxDomain::cube(1, 0.1, 2.0).expect("valid box"),
        BoxDomain::cube(1, -1.0, 1.0).expect("valid box"),
    )
}

/// `y' = -eps*y`, `z' = -z + eps*y`.
///
/// Fibers are vertical lines and the slow manifold is the line
/// `z = eps*y/(1 - eps)`.
pub fn linear2d() -> SystemDefinition {
    let (slow, fast) = unit_boxes();
    SystemDefinition::new(
        "linear2d",
        1,
        1,
        |y: &Vector, _z: &Vector, _eps| -y.clone(),
        |y: &Vector, z: &Vector, eps| Vector::from_element(1, -z[0] + eps * y[0]),
        slow,
        fast,
    )
    .expect("valid definition")
    .with_jacobian(|_y, _z, eps| Matrix::from_row_slice(2, 2, &[-eps, 0.0, eps, -1.0]))
}

/// Exact slow manifold of [`linear2d`].
pub fn linear2d_slow_manifold(y: f64, eps: f64) -> f64 {
    eps * y / (1.0 - eps)
}

/// `x' = -x` written as a fast-slow system (`g1 = -y`, `g2 = -z`).
pub fn scalar_decay() -> SystemDefinition {
    let (slow, fast) = unit_boxes();
    SystemDefinition::new(
        "scalar_decay",
        1,
        1,
        |y: &Vector, _z: &Vector, _eps| -y.clone(),
        |_y: &Vector, z: &Vector, _eps| -z.clone(),
        slow,
        fast,
    )
    .expect("valid definition")
    .with_jacobian(|_y, _z, eps| Matrix::from_row_slice(2, 2, &[-eps, 0.0, 0.0, -1.0]))
}

/// Fast fibers that are straight but non-parallel lines.
///
/// In coordinates `(u, w)` the dynamics decouple as `u' = -eps*u`,
/// `w' = -w`; the map `y = u*(1 + eps*tilt*w)`, `z = w` makes the fiber
/// through the base point `(u, 0)` the line with direction
/// `(eps*tilt*u, 1)`. The slow manifold is `z = 0`.
pub fn tilted_fibers(tilt: f64) -> SystemDefinition {
    let slow = BoxDomain::cube(1, 0.1, 2.0).expect("valid box");
    let fast = BoxDomain::cube(1, -0.9, 0.9).expect("valid box");
    SystemDefinition::new(
        "tilted",
        1,
        1,
        move |y: &Vector, z: &Vector, eps| {
            let w = z[0];
            let u = y[0] / (1.0 + eps * tilt * w);
            Vector::from_element(1, -u * (1.0 + eps * tilt * w + tilt * w))
        },
        |_y: &Vector, z: &Vector, _eps| -z.clone(),
        slow,
        fast,
    )
    .expect("valid definition")
    .with_jacobian(move |y, z, eps| {
        let w = z[0];
        let d = 1.0 + eps * tilt * w;
        let a = 1.0 + eps * tilt * w + tilt * w;
        // g1 = -y*a/d
        let dy = -a / d;
        let dw = -y[0] * (tilt * (1.0 + eps) * d - a * eps * tilt) / (d * d);
        Matrix::from_row_slice(2, 2, &[eps * dy, eps * dw, 0.0, -1.0])
    })
}

/// Exact fiber base point of `x` for [`tilted_fibers`].
pub fn tilted_fiber_base(x: &StatePoint, eps: f64, tilt: f64) -> StatePoint {
    let u = x.y[0] / (1.0 + eps * tilt * x.z[0]);
    StatePoint::from_slices(&[u], &[0.0])
}

/// Exact fiber direction through `x` for [`tilted_fibers`].
pub fn tilted_fiber_direction(x: &StatePoint, eps: f64, tilt: f64) -> Vector {
    let u = tilted_fiber_base(x, eps, tilt).y[0];
    Vector::from_column_slice(&[eps * tilt * u, 1.0])
}

/// Named demo systems available from the command line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DemoSystem {
    Mmh { kappa: f64, lambda: f64 },
    Linear2d,
    Tilted { tilt: f64 },
}

impl DemoSystem {
    pub fn from_name(name: &str, kappa: f64, lambda: f64, tilt: f64) -> Result<Self> {
        match name {
            "mmh" => Ok(Self::Mmh { kappa, lambda }),
            "linear2d" => Ok(Self::Linear2d),
            "tilted" => Ok(Self::Tilted { tilt }),
            other => Err(CspError::InvalidParameters(format!(
                "unknown system `{other}` (expected mmh, linear2d or tilted)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Mmh { .. } => "mmh",
            Self::Linear2d => "linear2d",
            Self::Tilted { .. } => "tilted",
        }
    }

    pub fn build(&self) -> Result<SystemDefinition> {
        match *self {
            Self::Mmh { kappa, lambda } => Ok(mmh_system(&MmhParams::new(kappa, lambda)?)),
            Self::Linear2d => Ok(linear2d()),
            Self::Tilted { tilt } => Ok(tilted_fibers(tilt)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{eval_g, fd_jacobian};

    #[test]
    fn tilted_jacobian_matches_differences() {
        let sys = tilted_fibers(1.5);
        for (y, z) in [(0.5, 0.3), (1.2, -0.4), (1.9, 0.8)] {
            let x = StatePoint::from_slices(&[y], &[z]);
            let dev = sys.jacobian_deviation(core::slice::from_ref(&x), 0.07).unwrap();
            assert!(dev < 1e-8, "{dev}");
            let _ = fd_jacobian(&sys, &x, 0.07).unwrap();
        }
    }

    #[test]
    fn tilted_fiber_lines_are_invariant() {
        // The fiber coordinate u = y/(1 + eps*tilt*z) obeys u' = -eps*u.
        let (eps, tilt) = (0.2, 1.5);
        let sys = tilted_fibers(tilt);
        let x = StatePoint::from_slices(&[1.3], &[0.6]);
        let g = eval_g(&sys, &x, eps).unwrap();
        let d = 1.0 + eps * tilt * x.z[0];
        let u = x.y[0] / d;
        let du = g[0] / d - x.y[0] * eps * tilt * g[1] / (d * d);
        assert!((du + eps * u).abs() < 1e-14);
    }

    #[test]
    fn registry_names() {
        assert_eq!(DemoSystem::from_name("mmh", 1.0, 0.5, 1.0).unwrap().name(), "mmh");
        assert!(DemoSystem::from_name("brusselator", 1.0, 0.5, 1.0).is_err());
        assert!(DemoSystem::Mmh {
            kappa: 0.5,
            lambda: 1.0
        }
        .build()
        .is_err());
    }
}
