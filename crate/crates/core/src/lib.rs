//! Total Lagrangian finite element engine for large-deformation flexible
//! multibody dynamics.
//!
//! The crate is organized as a pipeline of largely independent layers:
//!
//! * [`model`] — meshes, system state, and the backward-Euler step map.
//! * [`precompute`] — reference-configuration quantities (shape functions,
//!   quadrature, Jacobians, consistent mass) computed once per mesh.
//! * [`sparse`] — fixed-pattern CSR operators and a direct SPD solver with
//!   a one-time symbolic analysis and repeated numeric refactorization.
//! * [`materials`] — pointwise constitutive kernels (SVK, compressible
//!   Mooney-Rivlin, Kelvin-Voigt damping) and their tangents.
//! * [`assembly`] — two-stage internal-force evaluation, the augmented
//!   Lagrangian gradient, and the Gauss-Newton Hessian.
//! * [`constraints`] — CD/DP1 bilateral constraint primitives, joints,
//!   multiplier updates, and reaction recovery.
//! * [`solvers`] — the ALM outer loop with AdamW and Newton inner solvers.
//! * [`collision`] — BVH-free triangle-soup detection: margins, uniform
//!   bins, patch labeling, and projection-based narrow phase.
//! * [`contact`] — Hertz-Mindlin patch forces with Coulomb cap, rigid-body
//!   accumulation, and nodal force distribution.
//! * [`pipeline`] — per-step orchestration including the two-worker
//!   asynchronous detection contract.

pub mod assembly;
pub mod collision;
pub mod constraints;
pub mod contact;
pub mod diagnostics;
pub mod error;
pub mod materials;
pub mod meshgen;
pub mod model;
pub mod pipeline;
pub mod precompute;
pub mod solvers;
pub mod sparse;

pub use error::{Error, Result};
pub use model::{DofMap, Mesh, SystemState, TimeStepConfig};
pub use sparse::{CsrMatrix, CsrPattern, SpdSolveContext};
