//! Fast-slow systems `y' = eps*g1(y, z, eps)`, `z' = g2(y, z, eps)`.
//!
//! State vectors are always stacked in (slow, fast) order: the first `m`
//! entries are `y`, the remaining `n` entries are `z`. Time is the fast
//! time `t`; slow time is `tau = eps*t`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector, Schur};

use crate::error::{CspError, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Right-hand side component `(y, z, eps) -> R^k`.
pub type FieldFn = dyn Fn(&Vector, &Vector, f64) -> Vector + Send + Sync;
/// Analytic Jacobian of the stacked field `g = (eps*g1, g2)`.
pub type JacobianFn = dyn Fn(&Vector, &Vector, f64) -> Matrix + Send + Sync;

/// Relative step used for first-derivative central differences.
pub fn fd_base_step() -> f64 {
    libm::cbrt(f64::EPSILON)
}

/// A point `x = (y, z)` of phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePoint {
    pub y: Vector,
    pub z: Vector,
}

impl StatePoint {
    pub fn new(y: Vector, z: Vector) -> Self {
        Self { y, z }
    }

    pub fn from_slices(y: &[f64], z: &[f64]) -> Self {
        Self {
            y: Vector::from_column_slice(y),
            z: Vector::from_column_slice(z),
        }
    }

    /// Splits a stacked `(slow, fast)` vector.
    pub fn from_stacked(m: usize, x: &Vector) -> Self {
        let y = x.rows(0, m).into_owned();
        let z = x.rows(m, x.len() - m).into_owned();
        Self { y, z }
    }

    pub fn stacked(&self) -> Vector {
        let m = self.y.len();
        let mut x = Vector::zeros(m + self.z.len());
        x.rows_mut(0, m).copy_from(&self.y);
        x.rows_mut(m, self.z.len()).copy_from(&self.z);
        x
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.y.iter().chain(self.z.iter()).copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.y.iter().chain(self.z.iter()).all(|v| v.is_finite())
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(CspError::Dimension(format!(
                "box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if lower.iter().zip(&upper).any(|(lo, hi)| !(lo < hi)) {
            return Err(CspError::InvalidParameters(format!(
                "box lower bounds {lower:?} must be below upper bounds {upper:?}"
            )));
        }
        Ok(Self { lower, upper })
    }

    /// The same interval `[lo, hi]` on every one of `dim` axes.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(alloc::vec![lo; dim], alloc::vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, p: &Vector) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn center(&self) -> Vector {
        Vector::from_iterator(
            self.dim(),
            self.lower.iter().zip(&self.upper).map(|(lo, hi)| 0.5 * (lo + hi)),
        )
    }

    /// Largest side length.
    pub fn extent(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .fold(0.0, f64::max)
    }
}

/// A fast-slow vector field with `m` slow and `n` fast components.
#[derive(Clone)]
pub struct SystemDefinition {
    name: String,
    m: usize,
    n: usize,
    slow: Arc<FieldFn>,
    fast: Arc<FieldFn>,
    jacobian: Option<Arc<JacobianFn>>,
    slow_domain: BoxDomain,
    fast_box: BoxDomain,
}

impl fmt::Debug for SystemDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemDefinition")
            .field("name", &self.name)
            .field("m", &self.m)
            .field("n", &self.n)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .field("slow_domain", &self.slow_domain)
            .field("fast_box", &self.fast_box)
            .finish()
    }
}

impl SystemDefinition {
    pub fn new<G1, G2>(
        name: &str,
        m: usize,
        n: usize,
        g1: G1,
        g2: G2,
        slow_domain: BoxDomain,
        fast_box: BoxDomain,
    ) -> Result<Self>
    where
        G1: Fn(&Vector, &Vector, f64) -> Vector + Send + Sync + 'static,
        G2: Fn(&Vector, &Vector, f64) -> Vector + Send + Sync + 'static,
    {
        if m == 0 || n == 0 {
            return Err(CspError::InvalidSystem(format!(
                "need at least one slow and one fast variable, got m = {m}, n = {n}"
            )));
        }
        if slow_domain.dim() != m || fast_box.dim() != n {
            return Err(CspError::Dimension(format!(
                "slow domain has dimension {}, fast box {}; expected {m} and {n}",
                slow_domain.dim(),
                fast_box.dim()
            )));
        }
        Ok(Self {
            name: name.to_string(),
            m,
            n,
            slow: Arc::new(g1),
            fast: Arc::new(g2),
            jacobian: None,
            slow_domain,
            fast_box,
        })
    }

    /// Attaches an analytic Jacobian of the stacked field `(eps*g1, g2)`.
    pub fn with_jacobian<J>(mut self, jacobian: J) -> Self
    where
        J: Fn(&Vector, &Vector, f64) -> Matrix + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    /// Drops the analytic Jacobian so that finite differences are used.
    pub fn without_jacobian(mut self) -> Self {
        self.jacobian = None;
        self
    }

    pub fn with_slow_domain(mut self, domain: BoxDomain) -> Result<Self> {
        if domain.dim() != self.m {
            return Err(CspError::Dimension(format!(
                "slow domain of dimension {} for m = {}",
                domain.dim(),
                self.m
            )));
        }
        self.slow_domain = domain;
        Ok(self)
    }

    pub fn with_fast_box(mut self, fast_box: BoxDomain) -> Result<Self> {
        if fast_box.dim() != self.n {
            return Err(CspError::Dimension(format!(
                "fast box of dimension {} for n = {}",
                fast_box.dim(),
                self.n
            )));
        }
        self.fast_box = fast_box;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn slow_dim(&self) -> usize {
        self.m
    }

    pub fn fast_dim(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.m + self.n
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn slow_domain(&self) -> &BoxDomain {
        &self.slow_domain
    }

    pub fn fast_box(&self) -> &BoxDomain {
        &self.fast_box
    }

    /// Raw `g1(y, z, eps)` without the `eps` prefactor.
    pub fn g1(&self, y: &Vector, z: &Vector, eps: f64) -> Result<Vector> {
        let v = (self.slow)(y, z, eps);
        self.check_component("g1", &v, self.m, y, z, eps)?;
        Ok(v)
    }

    pub fn g2(&self, y: &Vector, z: &Vector, eps: f64) -> Result<Vector> {
        let v = (self.fast)(y, z, eps);
        self.check_component("g2", &v, self.n, y, z, eps)?;
        Ok(v)
    }

    fn check_component(
        &self,
        component: &'static str,
        v: &Vector,
        len: usize,
        y: &Vector,
        z: &Vector,
        eps: f64,
    ) -> Result<()> {
        if v.len() != len {
            return Err(CspError::Dimension(format!(
                "{component} returned {} entries, expected {len}",
                v.len()
            )));
        }
        if let Some(index) = v.iter().position(|e| !e.is_finite()) {
            return Err(CspError::EvaluationDomain {
                component,
                index,
                point: y.iter().chain(z.iter()).copied().collect(),
                eps,
            });
        }
        Ok(())
    }

    fn check_point(&self, x: &StatePoint) -> Result<()> {
        if x.y.len() != self.m || x.z.len() != self.n {
            return Err(CspError::Dimension(format!(
                "state has ({}, {}) components, system has ({}, {})",
                x.y.len(),
                x.z.len(),
                self.m,
                self.n
            )));
        }
        if !x.is_finite() {
            return Err(CspError::EvaluationDomain {
                component: "x",
                index: x.to_vec().iter().position(|v| !v.is_finite()).unwrap_or(0),
                point: x.to_vec(),
                eps: f64::NAN,
            });
        }
        Ok(())
    }

    /// Maximum relative deviation between the analytic Jacobian and the
    /// central-difference Jacobian over `points`.
    pub fn jacobian_deviation(&self, points: &[StatePoint], eps: f64) -> Result<f64> {
        let Some(jac) = &self.jacobian else {
            return Ok(0.0);
        };
        let mut worst: f64 = 0.0;
        for x in points {
            self.check_point(x)?;
            let analytic = jac(&x.y, &x.z, eps);
            let numeric = fd_jacobian(self, x, eps)?;
            let scale = analytic.norm().max(1.0);
            worst = worst.max((analytic - numeric).norm() / scale);
        }
        Ok(worst)
    }
}

/// Stacked field `(eps*g1, g2)` at `x`.
pub fn eval_g(sys: &SystemDefinition, x: &StatePoint, eps: f64) -> Result<Vector> {
    sys.check_point(x)?;
    if !(eps >= 0.0) {
        return Err(CspError::InvalidParameters(format!("eps must be >= 0, got {eps}")));
    }
    let g1 = sys.g1(&x.y, &x.z, eps)?;
    let g2 = sys.g2(&x.y, &x.z, eps)?;
    let mut g = Vector::zeros(sys.dim());
    g.rows_mut(0, sys.m).copy_from(&(g1 * eps));
    g.rows_mut(sys.m, sys.n).copy_from(&g2);
    Ok(g)
}

fn eval_g_stacked(sys: &SystemDefinition, x: &Vector, eps: f64) -> Result<Vector> {
    eval_g(sys, &StatePoint::from_stacked(sys.m, x), eps)
}

/// Central-difference Jacobian with steps `cbrt(machine eps) * max(1, |x_i|)`.
pub fn fd_jacobian(sys: &SystemDefinition, x: &StatePoint, eps: f64) -> Result<Matrix> {
    let base = x.stacked();
    let d = base.len();
    let mut jac = Matrix::zeros(d, d);
    for i in 0..d {
        let h = fd_base_step() * base[i].abs().max(1.0);
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[i] += h;
        minus[i] -= h;
        let (gp, gm) = match (eval_g_stacked(sys, &plus, eps), eval_g_stacked(sys, &minus, eps)) {
            (Ok(gp), Ok(gm)) => (gp, gm),
            (Err(e), _) | (_, Err(e)) => {
                return Err(CspError::Differentiation {
                    point: x.to_vec(),
                    reason: format!("offset evaluation along coordinate {i} failed: {e}"),
                })
            }
        };
        jac.set_column(i, &((gp - gm) / (2.0 * h)));
    }
    Ok(jac)
}

/// Jacobian of the stacked field; analytic when available.
pub fn eval_jacobian(sys: &SystemDefinition, x: &StatePoint, eps: f64) -> Result<Matrix> {
    sys.check_point(x)?;
    let jac = match &sys.jacobian {
        Some(j) => j(&x.y, &x.z, eps),
        None => fd_jacobian(sys, x, eps)?,
    };
    if jac.nrows() != sys.dim() || jac.ncols() != sys.dim() {
        return Err(CspError::Dimension(format!(
            "Jacobian is {}x{}, expected {}x{}",
            jac.nrows(),
            jac.ncols(),
            sys.dim(),
            sys.dim()
        )));
    }
    if jac.iter().any(|v| !v.is_finite()) {
        return Err(CspError::Differentiation {
            point: x.to_vec(),
            reason: "Jacobian has non-finite entries".to_string(),
        });
    }
    Ok(jac)
}

/// Real parts of the eigenvalues of `D_z g2`, sorted ascending.
pub fn fast_spectrum(sys: &SystemDefinition, y: &Vector, z: &Vector, eps: f64) -> Result<Vec<f64>> {
    let x = StatePoint::new(y.clone(), z.clone());
    let jac = eval_jacobian(sys, &x, eps)?;
    let (m, n) = (sys.m, sys.n);
    let block = jac.view((m, m), (n, n)).into_owned();
    let mut re: Vec<f64> = if n == 1 {
        alloc::vec![block[(0, 0)]]
    } else {
        let schur = Schur::try_new(block.clone(), 1e-14, 10_000).ok_or_else(|| CspError::EigenSolver {
            block: block.transpose().iter().copied().collect(),
        })?;
        schur.complex_eigenvalues().iter().map(|c| c.re).collect()
    };
    re.sort_by(f64::total_cmp);
    Ok(re)
}

/// `||Dg(p, eps=0) [I_m; slope]||_F` at a point `p = (y, h0(y))` of the
/// critical manifold. Vanishes because the critical manifold's tangent
/// space is the kernel of the leading-order Jacobian.
pub fn check_tangency_lemma(sys: &SystemDefinition, base: &StatePoint, slope: &Matrix) -> Result<f64> {
    let (m, n) = (sys.m, sys.n);
    if slope.nrows() != n || slope.ncols() != m {
        return Err(CspError::Dimension(format!(
            "slope is {}x{}, expected {n}x{m}",
            slope.nrows(),
            slope.ncols()
        )));
    }
    sys.check_point(base)?;
    let g2 = sys.g2(&base.y, &base.z, 0.0)?;
    if g2.norm() > 1e-10 {
        return Err(CspError::NotOnCriticalManifold {
            point: base.to_vec(),
            residual: g2.norm(),
        });
    }
    let jac = eval_jacobian(sys, base, 0.0)?;
    let mut tangent = Matrix::zeros(m + n, m);
    tangent.view_mut((0, 0), (m, m)).fill_with_identity();
    tangent.view_mut((m, 0), (n, m)).copy_from(slope);
    Ok((jac * tangent).norm())
}

/// Time-stamped states of an integration.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<StatePoint>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<StatePoint>) -> Result<Self> {
        if times.len() != states.len() || times.is_empty() {
            return Err(CspError::Dimension(format!(
                "{} times for {} states",
                times.len(),
                states.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(CspError::InvalidParameters(
                "times must be strictly increasing".to_string(),
            ));
        }
        Ok(Self { times, states })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[StatePoint] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> (f64, &StatePoint) {
        let i = self.times.len() - 1;
        (self.times[i], &self.states[i])
    }
}

const BLOW_UP: f64 = 1e12;

/// One classical RK4 step of the stacked system.
pub fn rk4_step(sys: &SystemDefinition, x: &Vector, eps: f64, dt: f64) -> Result<Vector> {
    let k1 = eval_g_stacked(sys, x, eps)?;
    let k2 = eval_g_stacked(sys, &(x + &k1 * (0.5 * dt)), eps)?;
    let k3 = eval_g_stacked(sys, &(x + &k2 * (0.5 * dt)), eps)?;
    let k4 = eval_g_stacked(sys, &(x + &k3 * dt), eps)?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// Step count and uniform step that land exactly on `t_end`.
pub(crate) fn step_plan(t_end: f64, dt: f64) -> (usize, f64) {
    let steps = libm::ceil(t_end / dt - 1e-9).max(1.0) as usize;
    (steps, t_end / steps as f64)
}

/// Fixed-step RK4 in fast time from `t = 0` to `t_end`.
///
/// The step is shrunk uniformly so the last sample lands on `t_end`;
/// `dt` must respect `0.5 / max|fast_spectrum|` (not checked here).
pub fn integrate(sys: &SystemDefinition, x0: &StatePoint, eps: f64, t_end: f64, dt: f64) -> Result<Trajectory> {
    sys.check_point(x0)?;
    if !(t_end > 0.0) || !(dt > 0.0) {
        return Err(CspError::InvalidParameters(format!(
            "need t_end > 0 and dt > 0, got t_end = {t_end}, dt = {dt}"
        )));
    }
    let (steps, h) = step_plan(t_end, dt);
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut x = x0.stacked();
    times.push(0.0);
    states.push(x0.clone());
    for k in 1..=steps {
        let next = match rk4_step(sys, &x, eps, h) {
            Ok(v) => v,
            Err(_) => {
                return Err(CspError::Divergence {
                    last_time: (k - 1) as f64 * h,
                })
            }
        };
        if !next.iter().all(|v| v.is_finite()) || next.norm() > BLOW_UP {
            return Err(CspError::Divergence {
                last_time: (k - 1) as f64 * h,
            });
        }
        x = next;
        times.push(if k == steps { t_end } else { k as f64 * h });
        states.push(StatePoint::from_stacked(sys.m, &x));
    }
    Trajectory::new(times, states)
}
