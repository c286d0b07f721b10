//! The CSP iteration: initial basis, the operator `Lambda` in block form,
//! the U/L refinement matrices and the stack of refined bases.
//!
//! Basis columns are ordered (fast `A_1`, slow `A_2`) and the rows of `B`
//! likewise (fast `B^1`, slow `B^2`); state rows are (slow, fast). The
//! blocks of `Lambda` therefore use index 1 for the fast block.
//!
//! Refined bases are evaluated lazily: level `q` at `x` needs level `q-1`
//! at `x` and at the two difference offsets around `x`, so evaluation
//! costs about `3^q` level-0 evaluations and nothing is stored.

use alloc::format;
use alloc::sync::Arc;

use crate::calculus::{field_time_derivative, MatrixField, StepSchedule};
use crate::error::{CspError, Result};
use crate::system::{eval_jacobian, Matrix, StatePoint, SystemDefinition};

/// Largest admissible condition number of `Lambda^11`.
pub const MAX_L11_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RefinementMode {
    /// Apply only the U step (sufficient for the slow manifold).
    OneStep,
    /// Apply the U and the L step.
    #[default]
    TwoStep,
}

impl RefinementMode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::OneStep => "one_step",
            Self::TwoStep => "two_step",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "one_step" => Ok(Self::OneStep),
            "two_step" => Ok(Self::TwoStep),
            other => Err(CspError::InvalidParameters(format!(
                "unknown refinement mode `{other}` (expected one_step or two_step)"
            ))),
        }
    }
}

/// Optional blocks of the initial basis; `None` entries take the defaults
/// `A12 = I`, `A21 = I`, `A22 = 0`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InitialBlocks {
    pub a12: Option<Matrix>,
    pub a21: Option<Matrix>,
    pub a22: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaBlocks {
    pub l11: Matrix,
    pub l12: Matrix,
    pub l21: Matrix,
    pub l22: Matrix,
    /// 2-norm condition number of `l11` (infinite when singular).
    pub condition: f64,
}

impl LambdaBlocks {
    pub fn from_full(lambda: &Matrix, n: usize) -> Self {
        let size = lambda.nrows();
        let m = size - n;
        let l11 = lambda.view((0, 0), (n, n)).into_owned();
        let condition = condition_number(&l11);
        Self {
            l12: lambda.view((0, n), (n, m)).into_owned(),
            l21: lambda.view((n, 0), (m, n)).into_owned(),
            l22: lambda.view((n, n), (m, m)).into_owned(),
            l11,
            condition,
        }
    }

    pub fn fast_dim(&self) -> usize {
        self.l11.nrows()
    }

    pub fn slow_dim(&self) -> usize {
        self.l22.nrows()
    }

    pub fn to_full(&self) -> Matrix {
        let (n, m) = (self.fast_dim(), self.slow_dim());
        let mut full = Matrix::zeros(n + m, n + m);
        full.view_mut((0, 0), (n, n)).copy_from(&self.l11);
        full.view_mut((0, n), (n, m)).copy_from(&self.l12);
        full.view_mut((n, 0), (m, n)).copy_from(&self.l21);
        full.view_mut((n, n), (m, m)).copy_from(&self.l22);
        full
    }
}

fn condition_number(a: &Matrix) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `U` (upper-right `n x m` block) and `L` (lower-left `m x n` block)
/// embedded in full `(n+m)`-square frames.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementMatrices {
    pub u: Matrix,
    pub l: Matrix,
    n: usize,
}

impl RefinementMatrices {
    pub fn u_block(&self) -> Matrix {
        let m = self.u.nrows() - self.n;
        self.u.view((0, self.n), (self.n, m)).into_owned()
    }

    pub fn l_block(&self) -> Matrix {
        let m = self.l.nrows() - self.n;
        self.l.view((self.n, 0), (m, self.n)).into_owned()
    }
}

/// `U = L11^-1 L12`, `L = L21 L11^-1`.
pub fn refinement_matrices(blocks: &LambdaBlocks) -> Result<RefinementMatrices> {
    refinement_at(blocks, 0, &[])
}

fn refinement_at(blocks: &LambdaBlocks, level: usize, point: &[f64]) -> Result<RefinementMatrices> {
    let (n, m) = (blocks.fast_dim(), blocks.slow_dim());
    let singular = || CspError::RefinementSingular {
        level,
        point: point.to_vec(),
        condition: blocks.condition,
    };
    if !(blocks.condition < MAX_L11_CONDITION) {
        return Err(singular());
    }
    let lu = blocks.l11.clone().lu();
    let u_block = lu.solve(&blocks.l12).ok_or_else(singular)?;
    // L21 L11^-1 = (L11^-T L21^T)^T
    let l_block = blocks
        .l11
        .transpose()
        .lu()
        .solve(&blocks.l21.transpose())
        .ok_or_else(singular)?
        .transpose();
    let mut u = Matrix::zeros(n + m, n + m);
    u.view_mut((0, n), (n, m)).copy_from(&u_block);
    let mut l = Matrix::zeros(n + m, n + m);
    l.view_mut((n, 0), (m, n)).copy_from(&l_block);
    Ok(RefinementMatrices { u, l, n })
}

#[derive(Debug)]
enum Kind {
    Initial { a: Matrix, b: Matrix },
    Refined { sys: SystemDefinition, parent: BasisStack },
}

#[derive(Debug)]
struct Level {
    level: usize,
    mode: RefinementMode,
    m: usize,
    n: usize,
    schedule: StepSchedule,
    kind: Kind,
}

/// One level of the CSP basis stack; cheap to clone.
#[derive(Debug, Clone)]
pub struct BasisStack {
    inner: Arc<Level>,
}

/// Constant level-0 basis. Errors if `A12` or `A21` is singular or a block
/// has the wrong shape.
pub fn initial_basis(m: usize, n: usize, blocks: Option<InitialBlocks>) -> Result<BasisStack> {
    if m == 0 || n == 0 {
        return Err(CspError::InvalidBasis(format!("need m, n >= 1, got m = {m}, n = {n}")));
    }
    let blocks = blocks.unwrap_or_default();
    let a12 = blocks.a12.unwrap_or_else(|| Matrix::identity(m, m));
    let a21 = blocks.a21.unwrap_or_else(|| Matrix::identity(n, n));
    let a22 = blocks.a22.unwrap_or_else(|| Matrix::zeros(n, m));
    for (name, mat, shape) in [("A12", &a12, (m, m)), ("A21", &a21, (n, n)), ("A22", &a22, (n, m))] {
        if mat.shape() != shape {
            return Err(CspError::InvalidBasis(format!(
                "{name} is {:?}, expected {shape:?}",
                mat.shape()
            )));
        }
    }
    let invert = |name: &str, mat: &Matrix| {
        if condition_number(mat) >= MAX_L11_CONDITION {
            return Err(CspError::InvalidBasis(format!("{name} is singular")));
        }
        mat.clone()
            .try_inverse()
            .ok_or_else(|| CspError::InvalidBasis(format!("{name} is singular")))
    };
    let a12_inv = invert("A12", &a12)?;
    let a21_inv = invert("A21", &a21)?;

    let mut a = Matrix::zeros(m + n, n + m);
    a.view_mut((0, n), (m, m)).copy_from(&a12);
    a.view_mut((m, 0), (n, n)).copy_from(&a21);
    a.view_mut((m, n), (n, m)).copy_from(&a22);

    let mut b = Matrix::zeros(n + m, m + n);
    b.view_mut((0, 0), (n, m)).copy_from(&(-(&a21_inv * &a22 * &a12_inv)));
    b.view_mut((0, m), (n, n)).copy_from(&a21_inv);
    b.view_mut((n, 0), (m, m)).copy_from(&a12_inv);

    Ok(BasisStack {
        inner: Arc::new(Level {
            level: 0,
            mode: RefinementMode::TwoStep,
            m,
            n,
            schedule: StepSchedule::default(),
            kind: Kind::Initial { a, b },
        }),
    })
}

impl BasisStack {
    /// Default level-0 basis refined `q` times.
    pub fn chain(sys: &SystemDefinition, q: usize, mode: RefinementMode, schedule: StepSchedule) -> Result<Self> {
        let mut basis = initial_basis(sys.slow_dim(), sys.fast_dim(), None)?.with_schedule(schedule);
        for _ in 0..q {
            basis = refine(sys, &basis, mode)?;
        }
        Ok(basis)
    }

    /// Same stack with a different difference-step schedule on every level.
    pub fn with_schedule(&self, schedule: StepSchedule) -> Self {
        let kind = match &self.inner.kind {
            Kind::Initial { a, b } => Kind::Initial {
                a: a.clone(),
                b: b.clone(),
            },
            Kind::Refined { sys, parent } => Kind::Refined {
                sys: sys.clone(),
                parent: parent.with_schedule(schedule),
            },
        };
        Self {
            inner: Arc::new(Level {
                level: self.inner.level,
                mode: self.inner.mode,
                m: self.inner.m,
                n: self.inner.n,
                schedule,
                kind,
            }),
        }
    }

    pub fn level(&self) -> usize {
        self.inner.level
    }

    pub fn mode(&self) -> RefinementMode {
        self.inner.mode
    }

    pub fn slow_dim(&self) -> usize {
        self.inner.m
    }

    pub fn fast_dim(&self) -> usize {
        self.inner.n
    }

    pub fn dim(&self) -> usize {
        self.inner.m + self.inner.n
    }

    pub fn schedule(&self) -> StepSchedule {
        self.inner.schedule
    }

    pub fn parent(&self) -> Option<&BasisStack> {
        match &self.inner.kind {
            Kind::Initial { .. } => None,
            Kind::Refined { parent, .. } => Some(parent),
        }
    }

    /// The level-`q` member of this chain.
    pub fn ancestor(&self, q: usize) -> Option<&BasisStack> {
        let mut current = self;
        while current.level() > q {
            current = current.parent()?;
        }
        (current.level() == q).then_some(current)
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.inner.kind, Kind::Initial { .. })
    }

    /// Difference step used when this level's `A` is differentiated.
    pub fn derivative_step(&self) -> f64 {
        self.inner.schedule.step(self.level().saturating_sub(1))
    }

    /// `(A, B)` at `x`.
    pub fn evaluate(&self, x: &StatePoint, eps: f64) -> Result<(Matrix, Matrix)> {
        if x.y.len() != self.slow_dim() || x.z.len() != self.fast_dim() {
            return Err(CspError::Dimension(format!(
                "point has ({}, {}) components, basis expects ({}, {})",
                x.y.len(),
                x.z.len(),
                self.slow_dim(),
                self.fast_dim()
            )));
        }
        match &self.inner.kind {
            Kind::Initial { a, b } => Ok((a.clone(), b.clone())),
            Kind::Refined { sys, parent, .. } => {
                let (a, b) = parent.evaluate(x, eps)?;
                let blocks = lambda_with(sys, parent, x, eps, &a, &b)?;
                let r = refinement_at(&blocks, parent.level(), &x.to_vec())?;
                let id = Matrix::identity(self.dim(), self.dim());
                Ok(match self.inner.mode {
                    RefinementMode::TwoStep => (a * (&id - &r.u) * (&id + &r.l), (&id - &r.l) * (&id + &r.u) * b),
                    RefinementMode::OneStep => (a * (&id - &r.u), (&id + &r.u) * b),
                })
            }
        }
    }

    /// `A` as a matrix field; constant at level 0.
    pub fn a_field(&self) -> MatrixField {
        match &self.inner.kind {
            Kind::Initial { a, .. } => MatrixField::constant(a.clone()),
            Kind::Refined { .. } => {
                let me = self.clone();
                MatrixField::new(
                    self.dim(),
                    self.dim(),
                    self.derivative_step(),
                    move |x: &StatePoint, eps| Ok(me.evaluate(x, eps)?.0),
                )
            }
        }
    }

    /// `B` as a matrix field; constant at level 0.
    pub fn b_field(&self) -> MatrixField {
        match &self.inner.kind {
            Kind::Initial { b, .. } => MatrixField::constant(b.clone()),
            Kind::Refined { .. } => {
                let me = self.clone();
                MatrixField::new(
                    self.dim(),
                    self.dim(),
                    self.derivative_step(),
                    move |x: &StatePoint, eps| Ok(me.evaluate(x, eps)?.1),
                )
            }
        }
    }

    /// Fast columns `A_1` at `x`.
    pub fn fast_columns(&self, x: &StatePoint, eps: f64) -> Result<Matrix> {
        let (a, _) = self.evaluate(x, eps)?;
        Ok(a.columns(0, self.fast_dim()).into_owned())
    }

    /// Fast rows `B^1` at `x`.
    pub fn fast_rows(&self, x: &StatePoint, eps: f64) -> Result<Matrix> {
        let (_, b) = self.evaluate(x, eps)?;
        Ok(b.rows(0, self.fast_dim()).into_owned())
    }
}

/// `(A, B)` of `basis` at `x`.
pub fn evaluate_basis(basis: &BasisStack, x: &StatePoint, eps: f64) -> Result<(Matrix, Matrix)> {
    basis.evaluate(x, eps)
}

fn lambda_with(
    sys: &SystemDefinition,
    basis: &BasisStack,
    x: &StatePoint,
    eps: f64,
    a: &Matrix,
    b: &Matrix,
) -> Result<LambdaBlocks> {
    let jac = eval_jacobian(sys, x, eps)?;
    let mut lambda = b * jac * a;
    if !basis.is_constant() {
        let da = field_time_derivative(sys, &basis.a_field(), x, eps)?;
        lambda -= b * da;
    }
    Ok(LambdaBlocks::from_full(&lambda, basis.fast_dim()))
}

/// Blocks of `Lambda = B (Dg) A - B dA/dt` for `basis` at `x`.
pub fn lambda_blocks(sys: &SystemDefinition, basis: &BasisStack, x: &StatePoint, eps: f64) -> Result<LambdaBlocks> {
    check_compatible(sys, basis)?;
    let (a, b) = basis.evaluate(x, eps)?;
    lambda_with(sys, basis, x, eps, &a, &b)
}

fn check_compatible(sys: &SystemDefinition, basis: &BasisStack) -> Result<()> {
    if sys.slow_dim() != basis.slow_dim() || sys.fast_dim() != basis.fast_dim() {
        return Err(CspError::Dimension(format!(
            "system `{}` has (m, n) = ({}, {}), basis has ({}, {})",
            sys.name(),
            sys.slow_dim(),
            sys.fast_dim(),
            basis.slow_dim(),
            basis.fast_dim()
        )));
    }
    Ok(())
}

/// The next level of the stack; evaluated pointwise on demand.
pub fn refine(sys: &SystemDefinition, basis: &BasisStack, mode: RefinementMode) -> Result<BasisStack> {
    check_compatible(sys, basis)?;
    let schedule = basis.schedule();
    Ok(BasisStack {
        inner: Arc::new(Level {
            level: basis.level() + 1,
            mode,
            m: basis.slow_dim(),
            n: basis.fast_dim(),
            schedule,
            kind: Kind::Refined {
                sys: sys.clone(),
                parent: basis.clone(),
            },
        }),
    })
}
