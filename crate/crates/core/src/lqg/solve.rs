//! Backward Riccati and forward mean integration, and the trajectory record.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::rhs::{psi_rhs_with, CoefficientSource};
use super::LqgError;
use crate::linalg::{is_finite, symmetrize};
use crate::problem::{validate_lqg, LqgProblem};

/// `Ψ, Π, Λ, μ` on the solver time grid, one entry per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainTrajectory {
    pub times: Vec<f64>,
    pub psi: Vec<DMatrix<f64>>,
    pub pi: Vec<DMatrix<f64>>,
    pub lambda: Vec<DMatrix<f64>>,
    pub mu: Vec<DVector<f64>>,
}

impl GainTrajectory {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Index `n` of the step `[t_n, t_{n+1})` containing `t`; `T` maps to the last step.
    pub fn step_index(&self, t: f64) -> usize {
        let n = (t / self.dt()).floor();
        let n = if n.is_finite() && n > 0.0 { n as usize } else { 0 };
        // Guard against t sitting a rounding error below a node.
        let n = if n + 1 < self.times.len() && (self.times[n + 1] - t).abs() <= 1e-12 * self.horizon().max(1.0) {
            n + 1
        } else {
            n
        };
        n.min(self.steps() - 1)
    }
}

pub(crate) fn ensure_valid(problem: &LqgProblem) -> Result<(), LqgError> {
    let report = validate_lqg(problem);
    if report.is_ok() {
        Ok(())
    } else {
        Err(LqgError::Invalid(report))
    }
}

/// Integrates `−Ψ̇ = Q + AᵀΨ + ΨA − ΨSΨ` backward from `Ψ(T) = P` with
/// classical RK4, symmetrizing after every step.
pub fn solve_psi(problem: &LqgProblem) -> Result<Vec<DMatrix<f64>>, LqgError> {
    ensure_valid(problem)?;
    let coeffs = CoefficientSource::new(problem)?;
    let steps = problem.steps();
    let dt = problem.dt;
    let mut psi = vec![DMatrix::zeros(problem.dim(), problem.dim()); steps + 1];
    psi[steps] = symmetrize(&problem.p);
    for n in (0..steps).rev() {
        let t1 = (n + 1) as f64 * dt;
        let c1 = coeffs.at(t1)?;
        let cm = coeffs.at(t1 - 0.5 * dt)?;
        let c0 = coeffs.at(t1 - dt)?;
        let y = &psi[n + 1];
        let k1 = psi_rhs_with(&c1, y);
        let k2 = psi_rhs_with(&cm, &(y + &k1 * (0.5 * dt)));
        let k3 = psi_rhs_with(&cm, &(y + &k2 * (0.5 * dt)));
        let k4 = psi_rhs_with(&c0, &(y + &k3 * dt));
        let next = symmetrize(&(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)));
        if !is_finite(&next) {
            return Err(LqgError::Divergence { what: "Psi", t: n as f64 * dt, iteration: 0 });
        }
        psi[n] = next;
    }
    Ok(psi)
}

/// Integrates `μ̇ = (A − SΨ)μ` forward from `μ₀` with RK4, taking `Ψ` at a
/// half step as the average of its node values.
pub fn solve_mu(problem: &LqgProblem, psi: &[DMatrix<f64>]) -> Result<Vec<DVector<f64>>, LqgError> {
    let coeffs = CoefficientSource::new(problem)?;
    let steps = problem.steps();
    if psi.len() != steps + 1 {
        return Err(LqgError::DimensionMismatch(format!("Psi has {} nodes, expected {}", psi.len(), steps + 1)));
    }
    let dt = problem.dt;
    let mut mu = Vec::with_capacity(steps + 1);
    mu.push(problem.mu0.clone());
    for n in 0..steps {
        let t0 = n as f64 * dt;
        let drift = |t: f64, p: &DMatrix<f64>| -> Result<DMatrix<f64>, LqgError> {
            let c = coeffs.at(t)?;
            Ok(&c.a - &c.s * p)
        };
        let psi_mid = (&psi[n] + &psi[n + 1]) * 0.5;
        let m0 = drift(t0, &psi[n])?;
        let mm = drift(t0 + 0.5 * dt, &psi_mid)?;
        let m1 = drift(t0 + dt, &psi[n + 1])?;
        let y = &mu[n];
        let k1 = &m0 * y;
        let k2 = &mm * (y + &k1 * (0.5 * dt));
        let k3 = &mm * (y + &k2 * (0.5 * dt));
        let k4 = &m1 * (y + &k3 * dt);
        let next = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(LqgError::Divergence { what: "mu", t: t0 + dt, iteration: 0 });
        }
        mu.push(next);
    }
    Ok(mu)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(horizon: f64, q: f64, p: f64) -> LqgProblem {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        LqgProblem {
            a: m(1.0).into(),
            b: m(1.0).into(),
            sigma: m(1.0).into(),
            q: m(q).into(),
            r: m(1.0).into(),
            p: m(p),
            mu0: DVector::from_element(1, 1.0),
            lambda0: m(1.0),
            horizon,
            dt: 0.01,
            state_dim: 1,
            memory_dim: 0,
        }
    }

    #[test]
    fn zero_cost_gives_zero_psi() {
        let psi = solve_psi(&scalar(2.0, 0.0, 0.0)).unwrap();
        assert!(psi.iter().all(|m| m[(0, 0)] == 0.0));
    }

    #[test]
    fn scalar_riccati_reaches_stationary_root() {
        let psi = solve_psi(&scalar(20.0, 1.0, 0.0)).unwrap();
        assert!((psi[0][(0, 0)] - (1.0 + 2f64.sqrt())).abs() <= 1e-6);
        assert_eq!(psi.last().unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn mean_decays_under_stationary_gain() {
        let p = scalar(5.0, 1.0, 1.0 + 2f64.sqrt());
        let psi = solve_psi(&p).unwrap();
        let mu = solve_mu(&p, &psi).unwrap();
        // Ψ sits at the root throughout, so μ(t) = exp(-√2 t).
        let t = 5.0;
        assert!((mu.last().unwrap()[0] - (-(2f64.sqrt()) * t).exp()).abs() < 1e-8);
    }

    #[test]
    fn step_index_maps_end_to_last_step() {
        let g = GainTrajectory {
            times: (0..=10).map(|n| n as f64 * 0.1).collect(),
            psi: vec![],
            pi: vec![],
            lambda: vec![],
            mu: vec![],
        };
        assert_eq!(g.step_index(0.0), 0);
        assert_eq!(g.step_index(0.3), 3);
        assert_eq!(g.step_index(0.35), 3);
        assert_eq!(g.step_index(1.0), 9);
    }
}
