//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller violated a documented precondition (dimension mismatch,
    /// out-of-range index, malformed input).
    #[error("usage error: {0}")]
    Usage(String),

    /// Mesh failed validation.
    #[error("invalid mesh: {0}")]
    Mesh(String),

    /// Non-positive Jacobian or deformation-gradient determinant.
    #[error("inverted element {element} (quadrature point {qp}): {detail}")]
    InvertedElement {
        element: usize,
        qp: usize,
        detail: String,
    },

    /// Cholesky hit a non-positive pivot; the system matrix is not SPD.
    /// Usually signals an over-large time step relative to the tangent
    /// stiffness (h must stay below sqrt(lambda_min(M)/|lambda_min(K_t)|)).
    #[error(
        "matrix not positive definite at row {row} (pivot {pivot:.3e}); \
         consider reducing the time step"
    )]
    NotPositiveDefinite { row: usize, pivot: f64 },

    /// A sparse index fell outside the fixed nonzero pattern.
    #[error("structural error: {0}")]
    Structural(String),

    /// Operation called in the wrong lifecycle state
    /// (e.g. refactorize before factorize, solve before factorize).
    #[error("state error: {0}")]
    State(String),

    /// Patch reduction produced a degenerate (near-zero) voted normal.
    #[error("degenerate contact patch: {0}")]
    DegeneratePatch(String),

    /// A simulation step exhausted its iteration budgets without meeting
    /// the outer constraint tolerance.
    #[error("step did not converge: {0}")]
    NonConvergence(String),
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}
