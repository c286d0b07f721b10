//! CSP manifolds `z = psi_q(y)`: zero sets of the fast amplitudes
//! `B^1_q g`, solved node by node on a slow grid.
//!
//! The row `B^1_q` is frozen at `(y, psi_{q-1}(y))`, so the order-`q`
//! value at `y` depends on its parent only at the same `y`. Re-solving the
//! chain at an arbitrary `y` ([`CspmTable::psi_exact`]) is therefore exact
//! up to the Newton tolerance, and node slopes come from differences of
//! such re-solves rather than from the tabulated values.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::engine::BasisStack;
use crate::error::{CspError, Result};
use crate::system::{eval_g, eval_jacobian, fd_base_step, Matrix, StatePoint, SystemDefinition, Vector};

pub const NEWTON_TOL: f64 = 1e-12;
pub const NEWTON_STEP_TOL: f64 = 1e-13;
pub const NEWTON_MAX_ITER: usize = 50;

/// Tensor-product grid of uniformly spaced slow coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowGrid {
    axes: Vec<Vec<f64>>,
}

impl SlowGrid {
    /// `nodes` uniform points per axis between `lower` and `upper`.
    pub fn uniform(lower: &[f64], upper: &[f64], nodes: usize) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(CspError::Dimension(format!(
                "grid bounds have {} and {} entries",
                lower.len(),
                upper.len()
            )));
        }
        if nodes < 4 {
            return Err(CspError::InvalidParameters(format!(
                "need at least 4 nodes per axis, got {nodes}"
            )));
        }
        let mut axes = Vec::with_capacity(lower.len());
        for (&lo, &hi) in lower.iter().zip(upper) {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(CspError::InvalidParameters(format!("empty grid interval [{lo}, {hi}]")));
            }
            let step = (hi - lo) / (nodes - 1) as f64;
            let mut axis: Vec<f64> = (0..nodes).map(|i| lo + step * i as f64).collect();
            axis[nodes - 1] = hi;
            axes.push(axis);
        }
        Ok(Self { axes })
    }

    pub fn line(lower: f64, upper: f64, nodes: usize) -> Result<Self> {
        Self::uniform(&[lower], &[upper], nodes)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axis(&self, k: usize) -> &[f64] {
        &self.axes[k]
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            let len = self.axes[k].len();
            idx[k] = flat % len;
            flat /= len;
        }
        idx
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, axis)| acc * axis.len() + i)
    }

    /// Node `i` in row-major order (last axis fastest).
    pub fn node(&self, i: usize) -> Vector {
        let idx = self.multi_index(i);
        Vector::from_iterator(self.dim(), idx.iter().zip(&self.axes).map(|(&j, axis)| axis[j]))
    }

    pub fn nodes(&self) -> Vec<Vector> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    pub fn contains(&self, y: &Vector) -> bool {
        y.len() == self.dim()
            && y.iter()
                .zip(&self.axes)
                .all(|(v, axis)| *v >= axis[0] && *v <= axis[axis.len() - 1])
    }

    /// Cell index along axis `k` such that `axis[i] <= v <= axis[i+1]`.
    fn cell(&self, k: usize, v: f64) -> usize {
        let axis = &self.axes[k];
        let h = (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64;
        let i = libm::floor((v - axis[0]) / h) as isize;
        i.clamp(0, axis.len() as isize - 2) as usize
    }
}

/// Order-`q` CSP manifold tabulated on a slow grid.
#[derive(Debug, Clone)]
pub struct CspmTable {
    order: usize,
    eps: f64,
    grid: SlowGrid,
    values: Vec<Vector>,
    slopes: Vec<Matrix>,
    residuals: Vec<f64>,
    sys: SystemDefinition,
    basis: BasisStack,
    parent: Option<Arc<CspmTable>>,
}

/// Root of `B1 g(y, z) = 0` in `z` by Newton, with `B1` held fixed.
fn newton_frozen(sys: &SystemDefinition, b1: &Matrix, y: &Vector, start: Vector, eps: f64) -> Result<(Vector, f64)> {
    let m = sys.slow_dim();
    let n = sys.fast_dim();
    let cap = 0.5 * sys.fast_box().extent();
    let mut z = start;
    let mut residuals = Vec::new();
    let fail = |z: &Vector, residuals: Vec<f64>| CspError::ManifoldSolve {
        y: y.iter().copied().collect(),
        last_iterate: z.iter().copied().collect(),
        residuals,
    };
    for _ in 0..NEWTON_MAX_ITER {
        let x = StatePoint::new(y.clone(), z.clone());
        let g = eval_g(sys, &x, eps).map_err(|_| fail(&z, residuals.clone()))?;
        let f = b1 * g;
        let r = f.norm();
        residuals.push(r);
        if r < NEWTON_TOL {
            return Ok((z, r));
        }
        let jac = eval_jacobian(sys, &x, eps).map_err(|_| fail(&z, residuals.clone()))?;
        let dz = jac.columns(m, n).into_owned();
        let mut step = (b1 * dz).lu().solve(&(-f)).ok_or_else(|| fail(&z, residuals.clone()))?;
        let size = step.norm();
        if !size.is_finite() {
            return Err(fail(&z, residuals));
        }
        if size > cap {
            step *= cap / size;
        }
        z += &step;
        if size < NEWTON_STEP_TOL {
            let x = StatePoint::new(y.clone(), z.clone());
            let r = (b1 * eval_g(sys, &x, eps)?).norm();
            return Ok((z, r));
        }
    }
    Err(fail(&z, residuals))
}

/// Fast rows of `basis` frozen at `(y, z_prev)`; `z_prev` is ignored at
/// level 0 where the basis is constant.
fn frozen_rows(basis: &BasisStack, y: &Vector, z_prev: Option<&Vector>, eps: f64) -> Result<Matrix> {
    let anchor = match z_prev {
        Some(z) => z.clone(),
        None => Vector::zeros(basis.fast_dim()),
    };
    basis.fast_rows(&StatePoint::new(y.clone(), anchor), eps)
}

fn solve_with_parent(
    sys: &SystemDefinition,
    basis: &BasisStack,
    y: &Vector,
    z_prev: Option<&Vector>,
    eps: f64,
) -> Result<(Vector, f64)> {
    let b1 = frozen_rows(basis, y, z_prev, eps)?;
    let start = match z_prev {
        Some(z) => z.clone(),
        None => sys.fast_box().center(),
    };
    newton_frozen(sys, &b1, y, start, eps)
}

/// One point of the order-`q` manifold, `q = basis.level()`.
///
/// For `q >= 1` the parent table must have order `q - 1` and cover `y`.
pub fn solve_cspm_point(
    sys: &SystemDefinition,
    basis: &BasisStack,
    psi_prev: Option<&CspmTable>,
    y: &Vector,
    eps: f64,
) -> Result<Vector> {
    if y.len() != sys.slow_dim() {
        return Err(CspError::Dimension(format!(
            "slow point has {} entries, system has m = {}",
            y.len(),
            sys.slow_dim()
        )));
    }
    let z_prev = match (basis.level(), psi_prev) {
        (0, _) => None,
        (q, Some(prev)) if prev.order() + 1 == q => {
            if !prev.grid().contains(y) {
                return Err(CspError::OutsideGrid {
                    y: y.iter().copied().collect(),
                });
            }
            Some(prev.psi_exact(y)?)
        }
        (q, Some(prev)) => {
            return Err(CspError::InvalidParameters(format!(
                "order-{q} solve needs an order-{} parent, got order {}",
                q - 1,
                prev.order()
            )))
        }
        (q, None) => {
            return Err(CspError::InvalidParameters(format!(
                "order-{q} solve needs a parent manifold"
            )))
        }
    };
    Ok(solve_with_parent(sys, basis, y, z_prev.as_ref(), eps)?.0)
}

/// Tables of orders `0..=basis.level()`, built bottom-up on `grid`;
/// returns the top one (parents stay reachable through it).
pub fn build_cspm(sys: &SystemDefinition, basis: &BasisStack, grid: &SlowGrid, eps: f64) -> Result<CspmTable> {
    if grid.dim() != sys.slow_dim() {
        return Err(CspError::Dimension(format!(
            "grid has dimension {}, system has m = {}",
            grid.dim(),
            sys.slow_dim()
        )));
    }
    let mut parent: Option<Arc<CspmTable>> = None;
    for q in 0..=basis.level() {
        let level = basis.ancestor(q).expect("chain contains every level").clone();
        let mut values = Vec::with_capacity(grid.len());
        let mut residuals = Vec::with_capacity(grid.len());
        let mut failed = Vec::new();
        let mut first = None;
        for i in 0..grid.len() {
            let y = grid.node(i);
            let prev = parent.as_ref().map(|p| p.values[i].clone());
            match solve_with_parent(sys, &level, &y, prev.as_ref(), eps) {
                Ok((z, r)) => {
                    values.push(z);
                    residuals.push(r);
                }
                Err(e) => {
                    failed.push(i);
                    first.get_or_insert(e);
                    values.push(Vector::zeros(sys.fast_dim()));
                    residuals.push(f64::NAN);
                }
            }
        }
        if let Some(first) = first {
            return Err(CspError::ManifoldBuild {
                nodes: failed,
                first: alloc::boxed::Box::new(first),
            });
        }
        let mut table = CspmTable {
            order: q,
            eps,
            grid: grid.clone(),
            values,
            slopes: Vec::new(),
            residuals,
            sys: sys.clone(),
            basis: level,
            parent: parent.clone(),
        };
        table.slopes = (0..grid.len())
            .map(|i| table.slope_at(&grid.node(i)))
            .collect::<Result<_>>()?;
        parent = Some(Arc::new(table));
    }
    Ok(Arc::try_unwrap(parent.expect("at least level 0")).unwrap_or_else(|arc| (*arc).clone()))
}

impl CspmTable {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn grid(&self) -> &SlowGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Vector] {
        &self.values
    }

    pub fn slopes(&self) -> &[Matrix] {
        &self.slopes
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn system(&self) -> &SystemDefinition {
        &self.sys
    }

    pub fn basis(&self) -> &BasisStack {
        &self.basis
    }

    pub fn parent(&self) -> Option<&CspmTable> {
        self.parent.as_deref()
    }

    /// The order-`q` table of this chain.
    pub fn ancestor(&self, q: usize) -> Option<&CspmTable> {
        let mut current = self;
        while current.order > q {
            current = current.parent()?;
        }
        (current.order == q).then_some(current)
    }

    /// `psi_q(y)` by re-solving the whole chain at `y`.
    pub fn psi_exact(&self, y: &Vector) -> Result<Vector> {
        let z_prev = match &self.parent {
            Some(p) => Some(p.psi_exact(y)?),
            None => None,
        };
        Ok(solve_with_parent(&self.sys, &self.basis, y, z_prev.as_ref(), self.eps)?.0)
    }

    /// `D psi_q(y)` (`n x m`) by central differences of chain re-solves.
    pub fn slope_at(&self, y: &Vector) -> Result<Matrix> {
        let (m, n) = (self.sys.slow_dim(), self.sys.fast_dim());
        let mut slope = Matrix::zeros(n, m);
        for k in 0..m {
            let h = fd_base_step() * y[k].abs().max(1.0);
            let mut plus = y.clone();
            plus[k] += h;
            let mut minus = y.clone();
            minus[k] -= h;
            let d = (self.psi_exact(&plus)? - self.psi_exact(&minus)?) / (2.0 * h);
            slope.set_column(k, &d);
        }
        Ok(slope)
    }

    /// Piecewise-cubic interpolant: Hermite with node slopes for `m = 1`,
    /// tensor-product local cubic Lagrange otherwise. Exact at nodes.
    pub fn eval_psi(&self, y: &Vector) -> Result<Vector> {
        if !self.grid.contains(y) {
            return Err(CspError::OutsideGrid {
                y: y.iter().copied().collect(),
            });
        }
        if self.grid.dim() == 1 {
            Ok(self.hermite(y[0]))
        } else {
            Ok(self.lagrange(y))
        }
    }

    fn hermite(&self, v: f64) -> Vector {
        let axis = self.grid.axis(0);
        let i = self.grid.cell(0, v);
        let (x0, x1) = (axis[i], axis[i + 1]);
        let h = x1 - x0;
        let t = (v - x0) / h;
        if t == 0.0 {
            return self.values[i].clone();
        }
        if t == 1.0 {
            return self.values[i + 1].clone();
        }
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        &self.values[i] * h00
            + self.slopes[i].column(0) * (h10 * h)
            + &self.values[i + 1] * h01
            + self.slopes[i + 1].column(0) * (h11 * h)
    }

    fn lagrange(&self, y: &Vector) -> Vector {
        let dim = self.grid.dim();
        // Per axis: four stencil indices and weights.
        let mut stencils = Vec::with_capacity(dim);
        for k in 0..dim {
            let axis = self.grid.axis(k);
            let len = axis.len();
            let cell = self.grid.cell(k, y[k]);
            let start = cell.saturating_sub(1).min(len - 4);
            let idx: [usize; 4] = core::array::from_fn(|j| start + j);
            let weights: [f64; 4] = core::array::from_fn(|j| {
                let mut w = 1.0;
                for (l, &other) in idx.iter().enumerate() {
                    if l != j {
                        w *= (y[k] - axis[other]) / (axis[idx[j]] - axis[other]);
                    }
                }
                w
            });
            stencils.push((idx, weights));
        }
        let mut out = Vector::zeros(self.sys.fast_dim());
        let mut pick = vec![0usize; dim];
        for combo in 0..4usize.pow(dim as u32) {
            let mut c = combo;
            let mut weight = 1.0;
            for k in (0..dim).rev() {
                let j = c % 4;
                c /= 4;
                pick[k] = stencils[k].0[j];
                weight *= stencils[k].1[j];
            }
            if weight != 0.0 {
                out += &self.values[self.grid.flat_index(&pick)] * weight;
            }
        }
        out
    }

    /// Largest node residual.
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

/// `|g2(y, psi) - eps * Dpsi(y) * g1(y, psi)|` at `psi = psi_q(y)`; zero on
/// an invariant graph. `Dpsi` comes from chain re-solves around `y`.
pub fn invariance_defect(sys: &SystemDefinition, table: &CspmTable, y: &Vector, eps: f64) -> Result<f64> {
    let z = table.psi_exact(y)?;
    let slope = table.slope_at(y)?;
    let g1 = sys.g1(y, &z, eps)?;
    let g2 = sys.g2(y, &z, eps)?;
    Ok((g2 - slope * g1 * eps).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::StepSchedule;
    use crate::engine::{initial_basis, RefinementMode};
    use crate::mmh::{h0, mmh_cspm_closed, mmh_system, MmhParams};
    use crate::system::check_tangency_lemma;
    use crate::systems::{linear2d, linear2d_slow_manifold};
    use approx::assert_relative_eq;

    fn mmh_chain(q: usize) -> (SystemDefinition, BasisStack) {
        let sys = mmh_system(&MmhParams::default());
        let basis = BasisStack::chain(&sys, q, RefinementMode::TwoStep, StepSchedule::default()).unwrap();
        (sys, basis)
    }

    fn y1(v: f64) -> Vector {
        Vector::from_element(1, v)
    }

    #[test]
    fn grid_layout() {
        let g = SlowGrid::uniform(&[0.0, 1.0], &[1.0, 2.0], 5).unwrap();
        assert_eq!(g.len(), 25);
        assert_eq!(g.node(0), Vector::from_column_slice(&[0.0, 1.0]));
        assert_eq!(g.node(1), Vector::from_column_slice(&[0.0, 1.25]));
        assert_eq!(g.node(24), Vector::from_column_slice(&[1.0, 2.0]));
        assert_eq!(g.flat_index(&g.multi_index(17)), 17);
        assert!(g.contains(&Vector::from_column_slice(&[0.5, 1.5])));
        assert!(!g.contains(&Vector::from_column_slice(&[1.5, 1.5])));
        assert!(SlowGrid::line(1.0, 0.0, 8).is_err());
        assert!(SlowGrid::line(0.0, 1.0, 3).is_err());
    }

    #[test]
    fn order_zero_is_the_critical_manifold() {
        let (sys, basis) = mmh_chain(0);
        for eps in [0.0, 0.05] {
            let z = solve_cspm_point(&sys, &basis, None, &y1(1.0), eps).unwrap();
            assert_relative_eq!(z[0], 0.5, epsilon = 1e-14);
        }
        let grid = SlowGrid::line(0.5, 2.0, 16).unwrap();
        let table = build_cspm(&sys, &basis, &grid, 0.0).unwrap();
        for (y, z) in grid.nodes().iter().zip(table.values()) {
            assert_relative_eq!(z[0], y[0] / (y[0] + 1.0), epsilon = 1e-14);
            assert!(sys.g2(y, z, 0.0).unwrap().norm() <= NEWTON_TOL);
        }
        assert!(table.max_residual() <= NEWTON_TOL);
    }

    #[test]
    fn linear_order_zero_root() {
        let sys = linear2d();
        let basis = initial_basis(1, 1, None).unwrap();
        let z = solve_cspm_point(&sys, &basis, None, &y1(1.5), 0.1).unwrap();
        assert_relative_eq!(z[0], 0.15, epsilon = 1e-15);
    }

    #[test]
    fn order_one_matches_closed_form() {
        let (sys, basis) = mmh_chain(1);
        let grid = SlowGrid::line(0.5, 2.0, 8).unwrap();
        let table = build_cspm(&sys, &basis, &grid, 0.01).unwrap();
        let z = solve_cspm_point(&sys, &basis, table.parent(), &y1(1.0), 0.01).unwrap();
        let closed = 0.5 + 0.01 * 0.03125 - 1e-4 * 0.75 / 128.0;
        assert!((z[0] - closed).abs() < 1e-6, "{}", z[0] - closed);
        assert!((z[0] - 0.50031191).abs() < 1e-8);
        assert!(solve_cspm_point(&sys, &basis, None, &y1(1.0), 0.01).is_err());
        assert!(solve_cspm_point(&sys, &basis, Some(&table), &y1(1.0), 0.01).is_err());
    }

    #[test]
    fn order_two_matches_closed_form() {
        let p = MmhParams::default();
        let (sys, basis) = mmh_chain(2);
        let eps = 1e-3;
        let grid = SlowGrid::line(0.5, 2.0, 16).unwrap();
        let table = build_cspm(&sys, &basis, &grid, eps).unwrap();
        assert_eq!(table.order(), 2);
        assert_eq!(table.ancestor(0).unwrap().order(), 0);
        for (y, z) in grid.nodes().iter().zip(table.values()) {
            let closed = mmh_cspm_closed(y[0], &p, eps, 2).unwrap();
            assert!((z[0] - closed).abs() <= 1e-9, "{}", z[0] - closed);
        }
        assert!(table.max_residual() <= NEWTON_TOL);
    }

    #[test]
    fn all_orders_coincide_at_eps_zero() {
        let (sys, basis) = mmh_chain(2);
        let grid = SlowGrid::line(0.5, 2.0, 8).unwrap();
        let top = build_cspm(&sys, &basis, &grid, 0.0).unwrap();
        let base = top.ancestor(0).unwrap();
        for q in 1..=2 {
            let t = top.ancestor(q).unwrap();
            for (a, b) in t.values().iter().zip(base.values()) {
                assert!((a - b).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn interpolation() {
        let (sys, basis) = mmh_chain(1);
        let grid = SlowGrid::line(0.5, 2.0, 64).unwrap();
        let table = build_cspm(&sys, &basis, &grid, 0.01).unwrap();
        for i in [0, 17, 63] {
            assert_eq!(table.eval_psi(&grid.node(i)).unwrap(), table.values()[i]);
        }
        let axis = grid.axis(0);
        for i in 0..63 {
            let mid = y1(0.5 * (axis[i] + axis[i + 1]));
            let err = (table.eval_psi(&mid).unwrap() - table.psi_exact(&mid).unwrap()).norm();
            assert!(err <= 1e-8, "{err}");
        }
        assert!(matches!(table.eval_psi(&y1(2.5)), Err(CspError::OutsideGrid { .. })));
    }

    #[test]
    fn constant_table_interpolates_constant() {
        let sys = crate::systems::scalar_decay();
        let basis = initial_basis(1, 1, None).unwrap();
        let table = build_cspm(&sys, &basis, &SlowGrid::line(0.1, 2.0, 10).unwrap(), 0.1).unwrap();
        for v in [0.1, 0.33, 1.7, 2.0] {
            assert_eq!(table.eval_psi(&y1(v)).unwrap()[0], 0.0);
        }
    }

    #[test]
    fn two_slow_variable_interpolation() {
        // z' = -(z - y1*y2^2): critical manifold z = y1*y2^2, a cubic.
        let sys = SystemDefinition::new(
            "product",
            2,
            1,
            |y: &Vector, _z: &Vector, _e| -y.clone(),
            |y: &Vector, z: &Vector, _e| Vector::from_element(1, -(z[0] - y[0] * y[1] * y[1])),
            crate::system::BoxDomain::cube(2, 0.0, 2.0).unwrap(),
            crate::system::BoxDomain::cube(1, -1.0, 10.0).unwrap(),
        )
        .unwrap();
        let basis = initial_basis(2, 1, None).unwrap();
        let grid = SlowGrid::uniform(&[0.0, 0.0], &[2.0, 2.0], 9).unwrap();
        let table = build_cspm(&sys, &basis, &grid, 0.0).unwrap();
        for (a, b) in [(0.3, 1.7), (1.9, 0.05), (1.0, 1.0)] {
            let z = table.eval_psi(&Vector::from_column_slice(&[a, b])).unwrap();
            assert_relative_eq!(z[0], a * b * b, epsilon = 1e-9);
        }
        let slope = table.slopes()[grid.flat_index(&[4, 4])].clone();
        assert_relative_eq!(slope, Matrix::from_row_slice(1, 2, &[1.0, 2.0]), epsilon = 1e-8);
    }

    #[test]
    fn invariance_defect_examples() {
        let sys = linear2d();
        // Order 3 at eps = 1e-3 reproduces the exact line to O(eps^4).
        let basis = BasisStack::chain(&sys, 3, RefinementMode::TwoStep, StepSchedule::default()).unwrap();
        let eps = 1e-3;
        let table = build_cspm(&sys, &basis, &SlowGrid::line(0.1, 2.0, 8).unwrap(), eps).unwrap();
        for v in [0.3, 1.0, 1.8] {
            assert_relative_eq!(
                table.psi_exact(&y1(v)).unwrap()[0],
                linear2d_slow_manifold(v, eps),
                epsilon = 1e-11
            );
            assert!(invariance_defect(&sys, &table, &y1(v), eps).unwrap() <= 1e-10);
        }

        let (sys, basis) = mmh_chain(0);
        let grid = SlowGrid::line(0.5, 2.0, 8).unwrap();
        let defect = |eps: f64| {
            let t = build_cspm(&sys, &basis, &grid, eps).unwrap();
            invariance_defect(&sys, &t, &y1(1.0), eps).unwrap()
        };
        let ratio = defect(1e-2) / defect(1e-3);
        assert!((ratio - 10.0).abs() < 0.5, "{ratio}");
    }

    #[test]
    fn tangency_on_critical_manifold() {
        let p = MmhParams::default();
        let (sys, basis) = mmh_chain(0);
        let grid = SlowGrid::line(0.1, 2.0, 20).unwrap();
        let table = build_cspm(&sys, &basis, &grid, 0.0).unwrap();
        for (i, y) in grid.nodes().iter().enumerate() {
            let base = StatePoint::new(y.clone(), table.values()[i].clone());
            assert_relative_eq!(base.z[0], h0(y[0], &p), epsilon = 1e-15);
            assert!(check_tangency_lemma(&sys, &base, &table.slopes()[i]).unwrap() <= 1e-6);
        }
    }

    #[test]
    fn failed_nodes_are_listed() {
        // g2 = 1 + z^2 has no real root.
        let sys = SystemDefinition::new(
            "rootless",
            1,
            1,
            |y: &Vector, _z: &Vector, _e| -y.clone(),
            |_y: &Vector, z: &Vector, _e| Vector::from_element(1, 1.0 + z[0] * z[0]),
            crate::system::BoxDomain::cube(1, 0.0, 1.0).unwrap(),
            crate::system::BoxDomain::cube(1, -1.0, 1.0).unwrap(),
        )
        .unwrap();
        let basis = initial_basis(1, 1, None).unwrap();
        match build_cspm(&sys, &basis, &SlowGrid::line(0.0, 1.0, 4).unwrap(), 0.0) {
            Err(CspError::ManifoldBuild { nodes, first }) => {
                assert_eq!(nodes, vec![0, 1, 2, 3]);
                assert!(matches!(*first, CspError::ManifoldSolve { .. }));
            }
            other => panic!("{other:?}"),
        }
    }
}
