//! Linear projection of initial conditions onto a CSP manifold along the
//! approximate fast fiber, plus a trajectory-based error measure and a
//! shooting reference for the true fiber base point.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::engine::BasisStack;
use crate::error::{CspError, Result};
use crate::manifold::CspmTable;
use crate::system::{fast_spectrum, fd_base_step, rk4_step, step_plan, Matrix, StatePoint, SystemDefinition, Vector};

const PROJ_TOL: f64 = 1e-13;
const PROJ_STEP_TOL: f64 = 1e-15;
const PROJ_MAX_ITER: usize = 50;

/// Share of the integration window over which the slow gap is measured.
pub const TAIL_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionScheme {
    /// Search for the base point whose linear fiber passes through `x0`.
    FiberSearch,
    /// Move along the fiber direction frozen at `(y0, psi(y0))`.
    VerticalBase,
}

impl ProjectionScheme {
    pub fn name(&self) -> &'static str {
        match self {
            Self::FiberSearch => "fiber_search",
            Self::VerticalBase => "vertical_base",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "fiber_search" => Ok(Self::FiberSearch),
            "vertical_base" => Ok(Self::VerticalBase),
            other => Err(CspError::InvalidParameters(format!(
                "unknown projection scheme `{other}` (expected fiber_search or vertical_base)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub base: StatePoint,
    pub scheme: ProjectionScheme,
    /// Coordinates along the fiber frame: `x0 = base + A_1 * amplitude`.
    pub amplitude: Vector,
    pub iterations: usize,
    pub residual: f64,
}

fn check_inputs(x0: &StatePoint, cspm: &CspmTable, basis: &BasisStack) -> Result<()> {
    let sys = cspm.system();
    if x0.y.len() != sys.slow_dim() || x0.z.len() != sys.fast_dim() {
        return Err(CspError::Dimension(format!(
            "x0 has ({}, {}) components, system has ({}, {})",
            x0.y.len(),
            x0.z.len(),
            sys.slow_dim(),
            sys.fast_dim()
        )));
    }
    if basis.level() != cspm.order() {
        return Err(CspError::InvalidParameters(format!(
            "basis level {} does not match manifold order {}",
            basis.level(),
            cspm.order()
        )));
    }
    if !x0.is_finite() {
        return Err(CspError::Projection {
            reason: "x0 is not finite".into(),
            trace: Vec::new(),
        });
    }
    Ok(())
}

fn projection_error(reason: String, trace: Vec<Vec<f64>>) -> CspError {
    CspError::Projection { reason, trace }
}

/// Newton on `f(u) = 0` with a central-difference Jacobian.
fn newton<F>(f: F, start: Vector, trace: &mut Vec<Vec<f64>>) -> Result<(Vector, usize, f64)>
where
    F: Fn(&Vector) -> Result<Vector>,
{
    let dim = start.len();
    let mut u = start;
    for iter in 0..PROJ_MAX_ITER {
        trace.push(u.iter().copied().collect());
        let r = f(&u)?;
        let norm = r.norm();
        if norm < PROJ_TOL {
            return Ok((u, iter, norm));
        }
        let mut jac = Matrix::zeros(r.len(), dim);
        for k in 0..dim {
            let h = fd_base_step() * u[k].abs().max(1.0);
            let mut plus = u.clone();
            plus[k] += h;
            let mut minus = u.clone();
            minus[k] -= h;
            jac.set_column(k, &((f(&plus)? - f(&minus)?) / (2.0 * h)));
        }
        let step = jac
            .lu()
            .solve(&(-&r))
            .ok_or_else(|| projection_error("singular Newton matrix".into(), trace.clone()))?;
        u += &step;
        if !u.iter().all(|v| v.is_finite()) {
            return Err(projection_error("Newton iterate is not finite".into(), trace.clone()));
        }
        if step.norm() < PROJ_STEP_TOL {
            let norm = f(&u)?.norm();
            trace.push(u.iter().copied().collect());
            return Ok((u, iter + 1, norm));
        }
    }
    Err(projection_error(
        format!("no convergence in {PROJ_MAX_ITER} iterations"),
        trace.clone(),
    ))
}

fn on_manifold(cspm: &CspmTable, y: &Vector, trace: &[Vec<f64>]) -> Result<StatePoint> {
    if !cspm.grid().contains(y) {
        return Err(projection_error(
            format!("base y = {:?} left the grid hull", y.as_slice()),
            trace.to_vec(),
        ));
    }
    Ok(StatePoint::new(y.clone(), cspm.psi_exact(y)?))
}

/// Solves `x0 = (y_p, psi(y_p)) + A_1(y_p, psi(y_p)) a` for `(y_p, a)`.
pub fn project_fiber_search(
    x0: &StatePoint,
    cspm: &CspmTable,
    basis: &BasisStack,
    eps: f64,
) -> Result<ProjectionResult> {
    check_inputs(x0, cspm, basis)?;
    let (m, n) = (x0.y.len(), x0.z.len());
    let target = x0.stacked();

    let mut trace = Vec::new();
    let start_base = on_manifold(cspm, &x0.y, &trace)?;
    let a1 = basis.fast_columns(&start_base, eps)?;
    let a0 = a1
        .rows(m, n)
        .into_owned()
        .lu()
        .solve(&(&x0.z - &start_base.z))
        .unwrap_or_else(|| &x0.z - &start_base.z);
    let mut start = Vector::zeros(m + n);
    start.rows_mut(0, m).copy_from(&x0.y);
    start.rows_mut(m, n).copy_from(&a0);

    let residual = |u: &Vector| -> Result<Vector> {
        let y = u.rows(0, m).into_owned();
        let base = on_manifold(cspm, &y, &[])?;
        let a1 = basis.fast_columns(&base, eps)?;
        Ok(base.stacked() + a1 * u.rows(m, n) - &target)
    };
    let (u, iterations, res) = newton(residual, start, &mut trace).map_err(|e| match e {
        CspError::Projection { .. } => e,
        other => projection_error(format!("{other}"), trace.clone()),
    })?;
    let base = on_manifold(cspm, &u.rows(0, m).into_owned(), &trace)?;
    Ok(ProjectionResult {
        base,
        scheme: ProjectionScheme::FiberSearch,
        amplitude: u.rows(m, n).into_owned(),
        iterations,
        residual: res,
    })
}

/// Intersects the line `x0 + span(A_1(p))`, `p = (y0, psi(y0))`, with the
/// manifold graph.
pub fn project_vertical_base(
    x0: &StatePoint,
    cspm: &CspmTable,
    basis: &BasisStack,
    eps: f64,
) -> Result<ProjectionResult> {
    check_inputs(x0, cspm, basis)?;
    let (m, n) = (x0.y.len(), x0.z.len());
    let mut trace = Vec::new();
    let p = on_manifold(cspm, &x0.y, &trace)?;
    let a1 = basis.fast_columns(&p, eps)?;
    let slow = a1.rows(0, m).into_owned();
    let fast = a1.rows(m, n).into_owned();

    let residual = |b: &Vector| -> Result<Vector> {
        let y = &x0.y + &slow * b;
        let z = &x0.z + &fast * b;
        let on = on_manifold(cspm, &y, &[])?;
        Ok(z - on.z)
    };
    let (b, iterations, res) = newton(residual, Vector::zeros(n), &mut trace).map_err(|e| match e {
        CspError::Projection { .. } => e,
        other => projection_error(format!("{other}"), trace.clone()),
    })?;
    let base = on_manifold(cspm, &(&x0.y + &slow * &b), &trace)?;
    Ok(ProjectionResult {
        base,
        scheme: ProjectionScheme::VerticalBase,
        amplitude: -b,
        iterations,
        residual: res,
    })
}

pub fn project(
    scheme: ProjectionScheme,
    x0: &StatePoint,
    cspm: &CspmTable,
    basis: &BasisStack,
    eps: f64,
) -> Result<ProjectionResult> {
    match scheme {
        ProjectionScheme::FiberSearch => project_fiber_search(x0, cspm, basis, eps),
        ProjectionScheme::VerticalBase => project_vertical_base(x0, cspm, basis, eps),
    }
}

/// Result of [`slow_phase_error`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlowPhaseReport {
    /// Largest slow-coordinate gap over the final part of the window.
    pub error: f64,
    /// Fast time actually integrated.
    pub t_end: f64,
    /// Set when a trajectory left the slow domain before the horizon.
    pub truncated: bool,
}

/// Fixed RK4 step: a quarter of the inverse fastest rate at the given points.
pub fn stable_step(sys: &SystemDefinition, points: &[&StatePoint], eps: f64) -> Result<f64> {
    let mut rate: f64 = 0.0;
    for x in points {
        for re in fast_spectrum(sys, &x.y, &x.z, eps)? {
            rate = rate.max(re.abs());
        }
    }
    Ok(0.25 / rate.max(1.0))
}

fn integrate_pair<F>(
    sys: &SystemDefinition,
    a: &StatePoint,
    b: &StatePoint,
    eps: f64,
    t_end: f64,
    mut visit: F,
) -> Result<(f64, bool)>
where
    F: FnMut(f64, &Vector, &Vector),
{
    let m = sys.slow_dim();
    let dt = stable_step(sys, &[a, b], eps)?;
    let (steps, h) = step_plan(t_end, dt);
    let mut xa = a.stacked();
    let mut xb = b.stacked();
    visit(0.0, &xa, &xb);
    for k in 1..=steps {
        let na = rk4_step(sys, &xa, eps, h)?;
        let nb = rk4_step(sys, &xb, eps, h)?;
        let domain = sys.slow_domain();
        let inside = |x: &Vector| domain.contains(&x.rows(0, m).into_owned());
        if !inside(&na) || !inside(&nb) {
            return Ok(((k - 1) as f64 * h, true));
        }
        xa = na;
        xb = nb;
        visit(k as f64 * h, &xa, &xb);
    }
    Ok((steps as f64 * h, false))
}

/// Largest slow gap between the trajectories of `x0` and `base` over the
/// last fifth of `[0, horizon/eps]` (fast time). If a trajectory leaves
/// the slow domain the window ends there and the report is flagged.
pub fn slow_phase_error(
    sys: &SystemDefinition,
    x0: &StatePoint,
    base: &StatePoint,
    eps: f64,
    horizon: f64,
) -> Result<SlowPhaseReport> {
    if !(eps > 0.0) || !(horizon > 0.0) {
        return Err(CspError::InvalidParameters(format!(
            "need eps > 0 and horizon > 0, got {eps}, {horizon}"
        )));
    }
    let m = sys.slow_dim();
    let t_full = horizon / eps;
    let mut gaps: Vec<(f64, f64)> = Vec::new();
    let (t_end, truncated) = integrate_pair(sys, x0, base, eps, t_full, |t, a, b| {
        gaps.push((t, (a.rows(0, m) - b.rows(0, m)).norm()));
    })?;
    let start = (1.0 - TAIL_FRACTION) * t_end;
    let error = gaps
        .iter()
        .filter(|(t, _)| *t >= start)
        .map(|(_, g)| *g)
        .fold(0.0, f64::max);
    Ok(SlowPhaseReport {
        error,
        t_end,
        truncated,
    })
}

/// Slow gap at the horizon between the trajectories of `x0` and of the
/// manifold point above `y`.
fn final_gap(
    sys: &SystemDefinition,
    cspm: &CspmTable,
    x0: &StatePoint,
    y: &Vector,
    eps: f64,
    t_end: f64,
) -> Result<Vector> {
    let base = on_manifold(cspm, y, &[])?;
    let m = sys.slow_dim();
    let mut last = Vector::zeros(m);
    let (_, truncated) = integrate_pair(sys, x0, &base, eps, t_end, |_, a, b| {
        last = a.rows(0, m) - b.rows(0, m);
    })?;
    if truncated {
        return Err(projection_error(
            "shooting trajectory left the slow domain".into(),
            Vec::new(),
        ));
    }
    Ok(last)
}

/// Reference fiber base point of `x0`: the point on `cspm` whose trajectory
/// ends, after `horizon/eps` fast time, at the same slow state as the
/// trajectory of `x0`.
pub fn shooting_base(x0: &StatePoint, cspm: &CspmTable, eps: f64, horizon: f64) -> Result<StatePoint> {
    if !(eps > 0.0) || !(horizon > 0.0) {
        return Err(CspError::InvalidParameters(format!(
            "need eps > 0 and horizon > 0, got {eps}, {horizon}"
        )));
    }
    let sys = cspm.system();
    let t_end = horizon / eps;
    let mut trace = Vec::new();
    let (y, _, _) = newton(
        |y: &Vector| final_gap(sys, cspm, x0, y, eps, t_end),
        x0.y.clone(),
        &mut trace,
    )?;
    on_manifold(cspm, &y, &trace)
}
