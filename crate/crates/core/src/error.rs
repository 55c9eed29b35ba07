//! Engine-level error type shared by the mechanics, frame, constraint and
//! solver modules.

use crate::dualnum::DomainError;
use crate::exprlang::EvalError;

#[derive(Debug, Clone, thiserror::Error)]
pub enum EngineError {
    #[error("{0}")]
    Eval(#[from] EvalError),

    #[error("{0}")]
    Domain(#[from] DomainError),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("frame map Jacobian is numerically singular at t = {t} (condition estimate {cond:.3e})")]
    SingularJacobian { t: f64, cond: f64 },

    #[error("Newton inversion of the frame map failed to converge at t = {t} (residual {residual:.3e} after {iterations} iterations)")]
    InversionFailure {
        t: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("frame map has no inverse expressions and no seed was supplied for Newton inversion")]
    MissingInverse,

    #[error("constraint embedding is rank deficient at t = {t} (singular value ratio {ratio:.3e})")]
    RankDeficient { t: f64, ratio: f64 },

    #[error("velocity Hessian of the Lagrangian is asymmetric beyond tolerance ({asymmetry:.3e}) at t = {t}")]
    AsymmetricHessian { t: f64, asymmetry: f64 },

    #[error("degenerate Lagrangian{}: {detail} (condition estimate {cond:.3e})", at_time(.t))]
    DegenerateLagrangian {
        t: Option<f64>,
        cond: f64,
        detail: &'static str,
    },

    #[error("solver failed to converge: best gradient max-norm {best_residual:.3e} after {iterations} iterations")]
    NonConvergence {
        iterations: usize,
        best_residual: f64,
    },

    #[error("time {t} lies outside the frame validity interval [{lo}, {hi}]")]
    OutsideValidity { t: f64, lo: f64, hi: f64 },

    #[error("{0}")]
    Invalid(String),
}

fn at_time(t: &Option<f64>) -> String {
    match t {
        Some(t) => format!(" at t = {t}"),
        None => String::new(),
    }
}

impl EngineError {
    /// Convenience constructor for validation-style failures.
    pub fn invalid(msg: impl Into<String>) -> Self {
        EngineError::Invalid(msg.into())
    }
}
