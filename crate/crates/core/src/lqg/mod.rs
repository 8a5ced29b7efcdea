//! Riccati backend for linear-quadratic-Gaussian problems.
//!
//! Under linear dynamics, quadratic cost and a Gaussian initial law the
//! density stays Gaussian with mean `μ` and precision `Λ`, and the value
//! function stays quadratic. The coupled PDE pair then reduces to:
//!
//! ```text
//! −Ψ̇ = Q + AᵀΨ + ΨA − ΨSΨ
//! −Π̇ = Q + AᵀΠ + ΠA − ΠSΠ + (I−K)ᵀΠSΠ(I−K)
//!  Λ̇ = −ÃᵀΛ − ΛÃ − ΛσσᵀΛ,   Ã = A − SΠK(Λ)
//!  μ̇ = (A − SΨ)μ
//! ```
//!
//! with `S = BR⁻¹Bᵀ` and the optimal memory feedback
//! `u = −R⁻¹Bᵀ(ΠK(Λ)(s−μ) + Ψμ)`.

mod fbsm;
mod law;
mod rhs;
mod solve;

use thiserror::Error;

use crate::problem::ValidationReport;

pub use fbsm::{fbsm_lqg, FbsmLqgOptions, FbsmLqgResult, IterationRecord, LqgIterate, Scheme, Sweep};
pub use law::{lqg_control, lqg_moments, lqg_objective, LqgControlLaw, Moments};
pub use rhs::{
    inference_gain, lambda_rhs, lambda_rhs_with, mu_rhs, pi_rhs, pi_rhs_with, psi_rhs, psi_rhs_with,
    Coefficients,
};
pub use solve::{solve_mu, solve_psi, GainTrajectory};

#[derive(Debug, Error)]
pub enum LqgError {
    #[error("problem failed validation:\n{0}")]
    Invalid(ValidationReport),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("state-state precision block is singular at t={t}")]
    SingularBlock { t: f64 },
    #[error("control cost R is not positive definite at t={t}")]
    SingularControlCost { t: f64 },
    #[error("{what} diverged (non-finite or lost definiteness) at t={t} in iteration {iteration}")]
    Divergence { what: &'static str, t: f64, iteration: usize },
    #[error("objective increased at iteration {k}: {previous} -> {current}")]
    Monotonicity { k: usize, previous: f64, current: f64 },
    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
}
