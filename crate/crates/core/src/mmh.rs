//! Michaelis-Menten-Henri reference model and its closed-form CSP iterates.
//!
//! `s' = eps*(-s + (s + kappa - lambda)*c)`, `c' = s - (s + kappa)*c` with
//! slow variable `s` and fast variable `c`. Every expansion here is
//! truncated after the `eps^2` term and serves as an oracle for the
//! numerical pipeline.

use alloc::format;

use crate::error::{CspError, Result};
use crate::system::{BoxDomain, Matrix, SystemDefinition, Vector};

/// Rate constants; requires `kappa > lambda > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmhParams {
    kappa: f64,
    lambda: f64,
}

impl MmhParams {
    pub fn new(kappa: f64, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && kappa > lambda && kappa.is_finite()) {
            return Err(CspError::InvalidParameters(format!(
                "MMH needs kappa > lambda > 0, got kappa = {kappa}, lambda = {lambda}"
            )));
        }
        Ok(Self { kappa, lambda })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl Default for MmhParams {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            lambda: 0.5,
        }
    }
}

/// The MMH system (`m = n = 1`) with analytic Jacobian, slow domain
/// `[0.1, 2]` and fast box `[-0.5, 1.5]`.
pub fn mmh_system(p: &MmhParams) -> SystemDefinition {
    let (k, l) = (p.kappa, p.lambda);
    SystemDefinition::new(
        "mmh",
        1,
        1,
        move |y: &Vector, z: &Vector, _eps| {
            let (s, c) = (y[0], z[0]);
            Vector::from_element(1, -s + (s + k - l) * c)
        },
        move |y: &Vector, z: &Vector, _eps| {
            let (s, c) = (y[0], z[0]);
            Vector::from_element(1, s - (s + k) * c)
        },
        BoxDomain::cube(1, 0.1, 2.0).expect("valid box"),
        BoxDomain::cube(1, -0.5, 1.5).expect("valid box"),
    )
    .expect("valid definition")
    .with_jacobian(move |y, z, eps| {
        let (s, c) = (y[0], z[0]);
        Matrix::from_row_slice(2, 2, &[eps * (c - 1.0), eps * (s + k - l), 1.0 - c, -(s + k)])
    })
}

/// Leading-order slow manifold `h0(s) = s/(s + kappa)`.
pub fn h0(s: f64, p: &MmhParams) -> f64 {
    s / (s + p.kappa)
}

pub fn h1(s: f64, p: &MmhParams) -> f64 {
    let a = s + p.kappa;
    p.kappa * p.lambda * s / libm::pow(a, 4.0)
}

pub fn h2(s: f64, p: &MmhParams) -> f64 {
    let (k, l) = (p.kappa, p.lambda);
    let a = s + k;
    k * l * s * (2.0 * k * l - 3.0 * l * s - k * s - k * k) / libm::pow(a, 7.0)
}

/// `h0 + eps*h1 + eps^2*h2` truncated after the `eps^order` term.
pub fn mmh_slow_series(s: f64, p: &MmhParams, eps: f64, order: usize) -> f64 {
    let mut c = h0(s, p);
    if order >= 1 {
        c += eps * h1(s, p);
    }
    if order >= 2 {
        c += eps * eps * h2(s, p);
    }
    c
}

fn check_level(q: usize) -> Result<()> {
    if q == 1 || q == 2 {
        Ok(())
    } else {
        Err(CspError::InvalidParameters(format!(
            "closed forms exist for q = 1, 2 only, got {q}"
        )))
    }
}

/// Closed-form CSP manifold of order `q`, truncated at `eps^2`.
pub fn mmh_cspm_closed(s: f64, p: &MmhParams, eps: f64, q: usize) -> Result<f64> {
    check_level(q)?;
    let (k, l) = (p.kappa, p.lambda);
    let a = s + k;
    let second = if q == 1 {
        -k * k * l * s * (a - l) / libm::pow(a, 7.0)
    } else {
        h2(s, p)
    };
    Ok(h0(s, p) + eps * h1(s, p) + eps * eps * second)
}

/// Fiber tangent at the base point `(s, h_eps(s))` with `alpha = 1`,
/// `beta = -kappa(a - lambda)/a^3`, `gamma` as for the second CSP
/// iterate and `s1(0) = 0`; `a = s + kappa`. Returned as `(slow, fast)`.
pub fn mmh_fiber_tangent(s: f64, p: &MmhParams, eps: f64, order: usize) -> Result<Vector> {
    if order > 2 {
        return Err(CspError::InvalidParameters(format!(
            "fiber tangent known to order 2, got {order}"
        )));
    }
    let (k, l) = (p.kappa, p.lambda);
    let a = s + k;
    let alpha = 1.0;
    let beta = -k * (a - l) / libm::pow(a, 3.0);
    let gamma = ((a - l) * (k * k * (a - 2.0 * l) + k * l * s) + k * l * l * s) / libm::pow(a, 6.0);
    let s1_0 = 0.0;
    let tilt = 1.0 - l / a;

    let mut slow = 0.0;
    let mut fast = alpha;
    if order >= 1 {
        slow += -eps * tilt * alpha;
        fast += eps * beta;
    }
    if order >= 2 {
        let curvature = l / (a * a) * (s1_0 + (k * (a - l) - l * s) / (a * a));
        slow += eps * eps * (-tilt * beta - curvature * alpha);
        fast += eps * eps * gamma;
    }
    Ok(Vector::from_column_slice(&[slow, fast]))
}

/// Closed-form fast basis column `A_1^(q)` on the order-`q` CSP manifold,
/// truncated at `eps^2`. Returned as `(slow, fast)`.
///
/// For `q = 1` the slow entry is `-eps*(a - lambda)/a`, the value of the
/// general-point expression (it does not depend on `c`).
pub fn mmh_a1_closed(s: f64, p: &MmhParams, eps: f64, q: usize) -> Result<Vector> {
    check_level(q)?;
    let (k, l) = (p.kappa, p.lambda);
    let a = s + k;
    let v = if q == 1 {
        [
            -eps * (a - l) / a,
            1.0 - eps * k * (a - l) / libm::pow(a, 3.0) + eps * eps * k * l * s * (a - l) / libm::pow(a, 6.0),
        ]
    } else {
        [
            -eps * (a - l) / a + eps * eps * (k * (a - 2.0 * l) * (a - l) + l * l * s) / libm::pow(a, 4.0),
            1.0 - eps * k * (a - l) / libm::pow(a, 3.0)
                + eps * eps * ((a - l) * (k * k * (a - 2.0 * l) + k * l * s) + k * l * l * s) / libm::pow(a, 6.0),
        ]
    };
    Ok(Vector::from_column_slice(&v))
}

/// First CSP basis `A^(1)` at an arbitrary point `(s, c)`; exact.
pub fn mmh_a1_general(s: f64, c: f64, p: &MmhParams, eps: f64) -> Matrix {
    let (k, l) = (p.kappa, p.lambda);
    let a = s + k;
    let r = (a - l) / a;
    Matrix::from_row_slice(2, 2, &[-eps * r, 1.0, 1.0 + eps * r * (c - 1.0) / a, -(c - 1.0) / a])
}

/// Blocks `(L11, L12, L21, L22)` of the level-1 operator at `(s, c)`,
/// truncated at `eps^2`.
pub fn mmh_lambda1_closed(s: f64, c: f64, p: &MmhParams, eps: f64) -> [f64; 4] {
    let (k, l) = (p.kappa, p.lambda);
    let a = s + k;
    let b = a - l;
    let w = b * c - s;
    let l11 = -a
        + eps * b / a * ((c - 1.0) + (c - s / a))
        + eps * eps * (c - 1.0) * b / libm::pow(a, 3.0) * (-l * (c - 1.0) + w);
    let l12 = s / a - c + eps * (c - 1.0) / (a * a) * (l * (c - 1.0) - w);
    let l21 = eps * eps / (a * a) * ((c - 1.0) * b * (a - 2.0 * l) + l * w + b * b * (c - s / a));
    let l22 = eps / a * (l * (c - 1.0) + b * (s / a - c))
        + eps * eps * (c - 1.0) * b / libm::pow(a, 3.0) * (l * (c - 1.0) - w);
    [l11, l12, l21, l22]
}

/// Initial slow offset that keeps two points on one fiber:
/// `ds1(0) = -((s0 + kappa - lambda)/(s0 + kappa)) * dc0(0)`.
pub fn mmh_fiber_slow_offset(s0: f64, p: &MmhParams, dc0: f64) -> f64 {
    -((s0 + p.kappa - p.lambda) / (s0 + p.kappa)) * dc0
}
