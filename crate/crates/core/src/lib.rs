//! Computational singular perturbation for fast-slow ODE systems.
//!
//! A system is `y' = eps*g1(y, z, eps)`, `z' = g2(y, z, eps)` with `m` slow
//! and `n` fast components. The CSP iteration refines a point-dependent
//! basis `(A, B)` so that the fast amplitudes `B^1 g` decouple from the slow
//! ones; the zero set of `B^1 g` approximates the slow manifold and the fast
//! basis columns approximate the tangent spaces of the fast fibers.
//!
//! Linear algebra is `nalgebra`; the crate is `no_std` with `alloc`.

#![cfg_attr(not(test), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod calculus;
pub mod engine;
pub mod error;
pub mod fibers;
pub mod manifold;
pub mod mmh;
pub mod projection;
pub mod system;
pub mod systems;

pub use calculus::{MatrixField, StepSchedule};
pub use engine::{BasisStack, LambdaBlocks, RefinementMatrices, RefinementMode};
pub use error::{CspError, Result};
pub use mmh::MmhParams;
pub use system::{BoxDomain, Matrix, StatePoint, SystemDefinition, Trajectory, Vector};
