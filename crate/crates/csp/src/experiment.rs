//! Experiment registry and the epsilon sweep driver.
//!
//! Each experiment reduces one `(eps, configuration)` pair to a scalar
//! metric, the maximum of some error over a slow grid. A sweep evaluates the
//! metric for a list of `eps` values and fits its order in `eps`.

use std::fmt;

use rayon::prelude::*;

use csp_core::engine::{lambda_blocks, BasisStack, RefinementMode};
use csp_core::fibers::{extract_cspf, principal_angle, EvalPolicy};
use csp_core::manifold::{build_cspm, invariance_defect, CspmTable, SlowGrid};
use csp_core::mmh::{mmh_a1_closed, mmh_cspm_closed, mmh_fiber_tangent, mmh_slow_series, MmhParams};
use csp_core::projection::{project, shooting_base, slow_phase_error, ProjectionScheme};
use csp_core::systems::DemoSystem;
use csp_core::{Matrix, StatePoint, StepSchedule, SystemDefinition, Vector};

use crate::config::RunConfig;
use crate::error::{AppError, AppResult};
use crate::fit::{fit_order, OrderFit, MIN_FIT_POINTS};

pub const MAX_ORDER: usize = 3;
pub const EPS_MIN: f64 = 1e-4;
/// Upper end of the default sweep window, `10^-1.5`.
pub const EPS_MAX: f64 = 0.031_622_776_601_683_79;
/// Projection sweeps may go up to this value.
pub const EPS_MAX_PROJECTION: f64 = 0.1;
/// Pass threshold for the closed-form comparison.
pub const ORACLE_TOL: f64 = 1e-3;
/// Allowed relative spread of `||Lambda_11||` over a sweep.
pub const LAMBDA11_SPREAD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    /// `max |psi_q - h_eps|` against the MMH series.
    ManifoldError,
    /// Largest invariance defect of `psi_q` at interior grid nodes.
    InvarianceDefect,
    /// Largest principal angle between the CSP fiber frame and the MMH tangent.
    FiberAngle,
    /// `max ||Lambda_12||` of the level-`q` basis on `psi_q`.
    Lambda12Decay,
    /// `max ||Lambda_21||` of the level-`q` basis on `psi_{q+1}`.
    Lambda21Decay,
    /// Slow-phase error of a projected initial condition against shooting.
    ProjectionError,
    /// Relative gap between numeric and closed-form MMH quantities.
    OracleDiff,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        Self::ManifoldError,
        Self::InvarianceDefect,
        Self::FiberAngle,
        Self::Lambda12Decay,
        Self::Lambda21Decay,
        Self::ProjectionError,
        Self::OracleDiff,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::ManifoldError => "manifold_error",
            Self::InvarianceDefect => "invariance_defect",
            Self::FiberAngle => "fiber_angle",
            Self::Lambda12Decay => "lambda12_decay",
            Self::Lambda21Decay => "lambda21_decay",
            Self::ProjectionError => "projection_error",
            Self::OracleDiff => "oracle_diff",
        }
    }

    pub fn from_name(name: &str) -> AppResult<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name).ok_or_else(|| {
            let known: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
            AppError::Usage(format!("unknown experiment `{name}` (known: {})", known.join(", ")))
        })
    }

    /// Compares against MMH closed forms.
    pub fn needs_reference(&self) -> bool {
        matches!(self, Self::ManifoldError | Self::FiberAngle | Self::OracleDiff)
    }

    /// Judged on a fitted slope rather than on each row.
    pub fn is_fitted(&self) -> bool {
        !matches!(self, Self::OracleDiff)
    }

    pub fn eps_max(&self) -> f64 {
        match self {
            Self::ProjectionError => EPS_MAX_PROJECTION,
            _ => EPS_MAX,
        }
    }

    /// Seven log-spaced points, `[1e-3, 1e-1]` for projections, a single
    /// `1e-3` for the closed-form comparison and `[1e-4, 10^-1.5]` otherwise.
    pub fn default_eps(&self) -> Vec<f64> {
        match self {
            Self::OracleDiff => vec![1e-3],
            Self::ProjectionError => log_spaced(-3.0, -1.0, 7),
            _ => log_spaced(-4.0, -1.5, 7),
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn log_spaced(lo_exp: f64, hi_exp: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 10f64.powf(lo_exp + (hi_exp - lo_exp) * i as f64 / (n - 1).max(1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nodes: usize,
}

impl GridSpec {
    pub fn build(&self) -> AppResult<SlowGrid> {
        Ok(SlowGrid::uniform(&self.lower, &self.upper, self.nodes)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub kind: ExperimentKind,
    pub q: usize,
    pub system: DemoSystem,
    pub mode: RefinementMode,
    pub policy: EvalPolicy,
    pub scheme: ProjectionScheme,
    pub grid: GridSpec,
    /// Initial condition for projections; a system default when absent.
    pub x0: Option<Vec<f64>>,
    /// Slow-time horizon for projections.
    pub horizon: f64,
}

impl Experiment {
    /// Defaults on MMH with `kappa = 1`, `lambda = 0.5`.
    pub fn new(kind: ExperimentKind, q: usize) -> AppResult<Self> {
        Self::from_config(
            kind,
            &RunConfig {
                q,
                ..RunConfig::default()
            },
        )
    }

    pub fn from_config(kind: ExperimentKind, cfg: &RunConfig) -> AppResult<Self> {
        let system = cfg.demo_system()?;
        let sys = system.build()?;
        let domain = sys.slow_domain();
        let (lo, hi) = match kind {
            ExperimentKind::OracleDiff => (0.5, 2.0),
            _ => (domain.lower[0], domain.upper[0]),
        };
        let m = sys.slow_dim();
        let grid = GridSpec {
            lower: vec![cfg.grid_min.unwrap_or(lo); m],
            upper: vec![cfg.grid_max.unwrap_or(hi); m],
            nodes: cfg.grid_nodes,
        };
        let exp = Self {
            kind,
            q: cfg.q,
            system,
            mode: cfg.mode,
            policy: cfg.policy,
            scheme: cfg.scheme,
            grid,
            x0: cfg.x0.clone(),
            horizon: cfg.horizon,
        };
        exp.validate()?;
        Ok(exp)
    }

    pub fn validate(&self) -> AppResult<()> {
        let usage = |msg: String| Err(AppError::Usage(msg));
        if self.q > MAX_ORDER {
            return usage(format!("order {} exceeds the supported maximum {MAX_ORDER}", self.q));
        }
        if self.kind.needs_reference() {
            if !matches!(self.system, DemoSystem::Mmh { .. }) {
                return usage(format!("{} needs the mmh system", self.kind));
            }
            if self.q > 2 {
                return usage(format!("{} has references up to q = 2", self.kind));
            }
        }
        if self.kind == ExperimentKind::OracleDiff && self.q == 0 {
            return usage("oracle_diff covers q = 1 and 2".into());
        }
        if self.kind == ExperimentKind::FiberAngle && self.policy == EvalPolicy::Previous && self.q == 0 {
            return usage("policy previous needs q >= 1".into());
        }
        if self.kind == ExperimentKind::ProjectionError && !(self.horizon > 0.0) {
            return usage(format!("horizon must be positive, got {}", self.horizon));
        }
        self.grid.build()?;
        Ok(())
    }

    /// Short `key=value` summary of the settings that affect the metric.
    pub fn params(&self) -> Vec<(&'static str, String)> {
        let mut p = vec![("system", self.system.name().to_string())];
        match self.system {
            DemoSystem::Mmh { kappa, lambda } => {
                p.push(("kappa", kappa.to_string()));
                p.push(("lambda", lambda.to_string()));
            }
            DemoSystem::Tilted { tilt } => p.push(("tilt", tilt.to_string())),
            DemoSystem::Linear2d => {}
        }
        p.push(("q", self.q.to_string()));
        p.push(("mode", self.mode.name().to_string()));
        match self.kind {
            ExperimentKind::FiberAngle => p.push(("policy", self.policy.name().to_string())),
            ExperimentKind::ProjectionError => {
                p.push(("scheme", self.scheme.name().to_string()));
                p.push(("horizon", self.horizon.to_string()));
                if let Some(x0) = &self.x0 {
                    p.push(("x0", join(x0)));
                }
            }
            _ => {}
        }
        p.push(("grid.min", join(&self.grid.lower)));
        p.push(("grid.max", join(&self.grid.upper)));
        p.push(("grid.nodes", self.grid.nodes.to_string()));
        p
    }

    fn mmh_params(&self) -> AppResult<MmhParams> {
        match self.system {
            DemoSystem::Mmh { kappa, lambda } => Ok(MmhParams::new(kappa, lambda)?),
            _ => Err(AppError::Usage(format!("{} needs the mmh system", self.kind))),
        }
    }

    fn initial_condition(&self, sys: &SystemDefinition) -> AppResult<StatePoint> {
        let (m, n) = (sys.slow_dim(), sys.fast_dim());
        if let Some(x0) = &self.x0 {
            if x0.len() != m + n {
                return Err(AppError::Usage(format!("x0 needs {} entries, got {}", m + n, x0.len())));
            }
            return Ok(StatePoint::from_slices(&x0[..m], &x0[m..]));
        }
        Ok(match self.system {
            DemoSystem::Mmh { .. } => StatePoint::from_slices(&[1.0], &[0.7]),
            _ => {
                let fast = sys.fast_box();
                let z: Vec<f64> = fast
                    .lower
                    .iter()
                    .zip(&fast.upper)
                    .map(|(lo, hi)| 0.25 * lo + 0.75 * hi)
                    .collect();
                StatePoint::from_slices(sys.slow_domain().center().as_slice(), &z)
            }
        })
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub eps: f64,
    pub metric: Option<f64>,
    /// Largest `||Lambda_11||` seen, recorded by `lambda21_decay`.
    pub lambda11_norm: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub pass: bool,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub experiment: Experiment,
    /// Sorted by decreasing `eps`.
    pub rows: Vec<SweepRow>,
    pub fit: Option<OrderFit>,
    pub fit_error: Option<String>,
}

impl SweepTable {
    pub fn successful(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.rows.iter().filter_map(|r| r.metric.map(|m| (r.eps, m)))
    }

    /// Relative spread `(max - min)/max` of the recorded `||Lambda_11||`.
    pub fn lambda11_spread(&self) -> Option<f64> {
        let norms: Vec<f64> = self.rows.iter().filter_map(|r| r.lambda11_norm).collect();
        if norms.is_empty() {
            return None;
        }
        let hi = norms.iter().cloned().fold(f64::MIN, f64::max);
        let lo = norms.iter().cloned().fold(f64::MAX, f64::min);
        Some((hi - lo) / hi)
    }

    /// Acceptance decision for the experiment's threshold.
    pub fn verdict(&self) -> Verdict {
        let exp = &self.experiment;
        let q = exp.q as f64;
        let fail = |reason: String| Verdict { pass: false, reason };
        if exp.kind == ExperimentKind::OracleDiff {
            if let Some(row) = self.rows.iter().find(|r| r.failure.is_some()) {
                return fail(format!("eps = {}: {}", row.eps, row.failure.as_deref().unwrap_or("")));
            }
            let worst = self.successful().map(|(_, m)| m).fold(0.0, f64::max);
            return Verdict {
                pass: worst <= ORACLE_TOL,
                reason: format!("max relative gap {worst:e}, limit {ORACLE_TOL:e}"),
            };
        }
        let Some(fit) = self.fit else {
            return fail(self.fit_error.clone().unwrap_or_else(|| "no fit".into()));
        };
        let s = fit.slope;
        let within = |lo: f64, hi: f64| Verdict {
            pass: s >= lo && s <= hi,
            reason: if hi.is_finite() {
                format!("slope {s:.3}, band [{lo:.1}, {hi:.1}]")
            } else {
                format!("slope {s:.3}, need >= {lo:.1}")
            },
        };
        match exp.kind {
            ExperimentKind::FiberAngle if exp.mode == RefinementMode::OneStep && exp.q >= 1 => Verdict {
                pass: true,
                reason: format!("slope {s:.3}, not enforced for one_step at q >= 1"),
            },
            ExperimentKind::ManifoldError | ExperimentKind::FiberAngle => within(q + 0.8, q + 1.5),
            ExperimentKind::InvarianceDefect => within(q + 0.8, f64::INFINITY),
            ExperimentKind::Lambda12Decay => within(q - 0.2, f64::INFINITY),
            ExperimentKind::ProjectionError => within(0.8, f64::INFINITY),
            ExperimentKind::Lambda21Decay => {
                let mut v = within(q + 0.8, f64::INFINITY);
                match self.lambda11_spread() {
                    Some(spread) => {
                        v.pass &= spread < LAMBDA11_SPREAD;
                        v.reason
                            .push_str(&format!(", |Lambda11| spread {:.2}%", 100.0 * spread));
                    }
                    None => {
                        v.pass = false;
                        v.reason.push_str(", no |Lambda11| recorded");
                    }
                }
                v
            }
            ExperimentKind::OracleDiff => unreachable!("handled above"),
        }
    }
}

fn check_eps_list(kind: ExperimentKind, eps: &[f64]) -> AppResult<Vec<f64>> {
    let hi = kind.eps_max();
    let slack = 1.0 + 1e-9;
    for &e in eps {
        if !(e >= EPS_MIN / slack && e <= hi * slack) {
            return Err(AppError::Usage(format!(
                "eps = {e} outside [{EPS_MIN}, {hi}] for {kind}"
            )));
        }
    }
    let mut sorted = eps.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(AppError::Usage("eps values must be distinct".into()));
    }
    let needed = if kind.is_fitted() { MIN_FIT_POINTS } else { 1 };
    if sorted.len() < needed {
        return Err(AppError::Usage(format!(
            "{kind} needs at least {needed} eps values, got {}",
            sorted.len()
        )));
    }
    Ok(sorted)
}

/// Evaluates `exp` at every `eps` (in parallel) and fits the order.
///
/// Rows come back sorted by decreasing `eps`. A row whose evaluation fails
/// keeps the error message; the fit uses the remaining rows.
pub fn run_sweep(exp: &Experiment, eps_list: &[f64]) -> AppResult<SweepTable> {
    exp.validate()?;
    let eps = check_eps_list(exp.kind, eps_list)?;
    let sys = exp.system.build()?;
    let grid = exp.grid.build()?;
    // Lambda_21 of level q is measured on the level q+1 manifold.
    let depth = exp.q + usize::from(exp.kind == ExperimentKind::Lambda21Decay);
    let basis = BasisStack::chain(&sys, depth, exp.mode, StepSchedule::default())?;

    let rows: Vec<SweepRow> = eps
        .par_iter()
        .map(|&e| match evaluate(exp, &sys, &basis, &grid, e) {
            Ok((metric, lambda11_norm)) => SweepRow {
                eps: e,
                metric: Some(metric),
                lambda11_norm,
                failure: None,
            },
            Err(err) => SweepRow {
                eps: e,
                metric: None,
                lambda11_norm: None,
                failure: Some(err.to_string()),
            },
        })
        .collect();

    let (fit, fit_error) = if exp.kind.is_fitted() {
        let (e, m): (Vec<f64>, Vec<f64>) = rows.iter().filter_map(|r| r.metric.map(|m| (r.eps, m))).unzip();
        match fit_order(&e, &m) {
            Ok(f) => (Some(f), None),
            Err(err) => (None, Some(err.to_string())),
        }
    } else {
        (None, None)
    };
    Ok(SweepTable {
        experiment: exp.clone(),
        rows,
        fit,
        fit_error,
    })
}

fn is_interior(grid: &SlowGrid, y: &Vector) -> bool {
    (0..grid.dim()).all(|k| {
        let axis = grid.axis(k);
        y[k] != axis[0] && y[k] != axis[axis.len() - 1]
    })
}

fn as_frame(v: &Vector) -> Matrix {
    Matrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn max_over<F>(grid: &SlowGrid, mut f: F) -> AppResult<f64>
where
    F: FnMut(usize, &Vector) -> AppResult<f64>,
{
    let mut worst: f64 = 0.0;
    for (i, y) in grid.nodes().iter().enumerate() {
        let v = f(i, y)?;
        if !v.is_finite() {
            return Err(AppError::Metric(format!("metric is {v} at y = {}", y[0])));
        }
        worst = worst.max(v);
    }
    Ok(worst)
}

fn evaluate(
    exp: &Experiment,
    sys: &SystemDefinition,
    top: &BasisStack,
    grid: &SlowGrid,
    eps: f64,
) -> AppResult<(f64, Option<f64>)> {
    let q = exp.q;
    let top_table = build_cspm(sys, top, grid, eps)?;
    let table: &CspmTable = top_table.ancestor(q).expect("chain has level q");
    let basis = top.ancestor(q).expect("chain has level q");
    let metric = match exp.kind {
        ExperimentKind::ManifoldError => {
            let p = exp.mmh_params()?;
            max_over(grid, |i, y| {
                let s = y[0];
                let reference = if q == 2 {
                    mmh_cspm_closed(s, &p, eps, 2)?
                } else {
                    mmh_slow_series(s, &p, eps, 2)
                };
                Ok((table.values()[i][0] - reference).abs())
            })?
        }
        ExperimentKind::InvarianceDefect => max_over(grid, |_, y| {
            if is_interior(grid, y) {
                Ok(invariance_defect(sys, table, y, eps)?)
            } else {
                Ok(0.0)
            }
        })?,
        ExperimentKind::FiberAngle => {
            let p = exp.mmh_params()?;
            max_over(grid, |_, y| {
                let frame = extract_cspf(basis, table, table.parent(), y, eps, exp.policy)?;
                let tangent = mmh_fiber_tangent(y[0], &p, eps, 2)?;
                Ok(principal_angle(&frame.columns, &as_frame(&tangent))?)
            })?
        }
        ExperimentKind::Lambda12Decay => max_over(grid, |i, y| {
            let x = StatePoint::new(y.clone(), table.values()[i].clone());
            Ok(lambda_blocks(sys, basis, &x, eps)?.l12.norm())
        })?,
        ExperimentKind::Lambda21Decay => {
            let mut l11: f64 = 0.0;
            let l21 = max_over(grid, |i, y| {
                let x = StatePoint::new(y.clone(), top_table.values()[i].clone());
                let blocks = lambda_blocks(sys, basis, &x, eps)?;
                l11 = l11.max(blocks.l11.norm());
                Ok(blocks.l21.norm())
            })?;
            return Ok((l21, Some(l11)));
        }
        ExperimentKind::ProjectionError => {
            let x0 = exp.initial_condition(sys)?;
            let reference = shooting_base(&x0, table, eps, exp.horizon)?;
            let projected = project(exp.scheme, &x0, table, basis, eps)?;
            let report = slow_phase_error(sys, &reference, &projected.base, eps, exp.horizon)?;
            if report.truncated {
                return Err(AppError::Metric(format!(
                    "trajectory left the slow domain at t = {}",
                    report.t_end
                )));
            }
            report.error
        }
        ExperimentKind::OracleDiff => {
            let p = exp.mmh_params()?;
            max_over(grid, |i, y| {
                let s = y[0];
                let closed = mmh_cspm_closed(s, &p, eps, q)?;
                let psi_gap = (table.values()[i][0] - closed).abs() / closed.abs();
                let frame = extract_cspf(basis, table, table.parent(), y, eps, EvalPolicy::Current)?;
                let col = frame.columns.column(0).into_owned();
                let a1 = mmh_a1_closed(s, &p, eps, q)?;
                Ok(psi_gap.max((&col - &a1).norm() / a1.norm()))
            })?
        }
    };
    Ok((metric, None))
}
