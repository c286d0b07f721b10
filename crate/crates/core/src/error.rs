use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = CspError> = core::result::Result<T, E>;

/// Failures raised anywhere in the CSP pipeline.
///
/// Variants carry the point (stacked slow/fast state or slow coordinates)
/// where the failure occurred so callers can report it without re-running.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CspError {
    #[error("invalid system definition: {0}")]
    InvalidSystem(String),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {component}[{index}] at x = {point:?}, eps = {eps}")]
    EvaluationDomain {
        component: &'static str,
        index: usize,
        point: Vec<f64>,
        eps: f64,
    },

    #[error("numerical differentiation failed at x = {point:?}: {reason}")]
    Differentiation { point: Vec<f64>, reason: String },

    #[error("eigenvalue solver did not converge for fast block {block:?} (row-major)")]
    EigenSolver { block: Vec<f64> },

    #[error("point {point:?} is not on the critical manifold (|g2| = {residual:e})")]
    NotOnCriticalManifold { point: Vec<f64>, residual: f64 },

    #[error("integration diverged; last valid time t = {last_time}")]
    Divergence { last_time: f64 },

    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("refinement of level {level} is singular at x = {point:?}: cond(L11) = {condition:e}")]
    RefinementSingular {
        level: usize,
        point: Vec<f64>,
        condition: f64,
    },

    #[error("manifold solve diverged at y = {y:?}: last iterate {last_iterate:?}, residuals {residuals:?}")]
    ManifoldSolve {
        y: Vec<f64>,
        last_iterate: Vec<f64>,
        residuals: Vec<f64>,
    },

    #[error("manifold build failed at nodes {nodes:?}: {first}")]
    ManifoldBuild { nodes: Vec<usize>, first: Box<CspError> },

    #[error("slow point {y:?} lies outside the grid hull")]
    OutsideGrid { y: Vec<f64> },

    #[error("degenerate fiber frame: smallest singular value {sigma_min:e}")]
    DegenerateFrame { sigma_min: f64 },

    #[error("projection failed: {reason}; iterate trace {trace:?}")]
    Projection { reason: String, trace: Vec<Vec<f64>> },
}
