//! The forward-backward sweep loop on the Riccati system.

use std::sync::Arc;

use log::{debug, info};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::law::lqg_objective;
use super::rhs::{at_time, inference_gain, lambda_rhs_with, pi_rhs_with, CoefficientSource};
use super::solve::{ensure_valid, solve_mu, solve_psi, GainTrajectory};
use super::LqgError;
use crate::linalg::{is_finite, is_pd, symmetrize};
use crate::problem::LqgProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Classical RK4 within each step, the other variable frozen.
    #[default]
    Rk4,
    /// The literal explicit update of the sweep equations.
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sweep {
    Initial,
    Backward,
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub sweep: Sweep,
    pub objective: f64,
}

/// The `(Π^k, Λ^k)` pair defining the `k`-th control. A sweep replaces one
/// of them; the other is shared with the previous iterate.
#[derive(Debug, Clone)]
pub struct LqgIterate {
    pub pi: Arc<Vec<DMatrix<f64>>>,
    pub lambda: Arc<Vec<DMatrix<f64>>>,
}

#[derive(Debug, Clone)]
pub struct FbsmLqgOptions {
    /// Number of sweeps after the initial forward pass.
    pub max_iters: usize,
    /// Relative tolerance on successive objectives.
    pub tol: f64,
    pub scheme: Scheme,
    /// Stop at the first converged iteration instead of running `max_iters`.
    pub stop_early: bool,
    /// Relative slack allowed on objective increases.
    pub monotonicity_slack: f64,
    /// `Π⁰` on the time grid; zero when absent.
    pub initial_pi: Option<Vec<DMatrix<f64>>>,
}

impl Default for FbsmLqgOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-6,
            scheme: Scheme::Rk4,
            stop_early: false,
            monotonicity_slack: 1e-8,
            initial_pi: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FbsmLqgResult {
    pub times: Vec<f64>,
    pub psi: Arc<Vec<DMatrix<f64>>>,
    pub mu: Arc<Vec<nalgebra::DVector<f64>>>,
    /// Iterate 0 is the initial control; iterate `k ≥ 1` follows sweep `k`.
    pub iterates: Vec<LqgIterate>,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
}

impl FbsmLqgResult {
    pub fn gains(&self, k: usize) -> GainTrajectory {
        let it = &self.iterates[k];
        GainTrajectory {
            times: self.times.clone(),
            psi: (*self.psi).clone(),
            pi: (*it.pi).clone(),
            lambda: (*it.lambda).clone(),
            mu: (*self.mu).clone(),
        }
    }

    pub fn final_gains(&self) -> GainTrajectory {
        self.gains(self.iterates.len() - 1)
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.objective).collect()
    }

    pub fn final_objective(&self) -> f64 {
        self.iterations.last().map(|r| r.objective).unwrap_or(f64::NAN)
    }
}

fn backward_sweep(
    problem: &LqgProblem,
    coeffs: &CoefficientSource<'_>,
    lambda: &[DMatrix<f64>],
    scheme: Scheme,
    iteration: usize,
) -> Result<Vec<DMatrix<f64>>, LqgError> {
    let steps = problem.steps();
    let dt = problem.dt;
    let (dx, dz) = (problem.state_dim, problem.memory_dim);
    let mut pi = vec![DMatrix::zeros(problem.dim(), problem.dim()); steps + 1];
    pi[steps] = symmetrize(&problem.p);
    for n in (0..steps).rev() {
        let t0 = n as f64 * dt;
        let k = inference_gain(&lambda[n], dx, dz).map_err(|e| at_time(e, t0))?;
        let y = &pi[n + 1];
        let next = match scheme {
            Scheme::Euler => y + pi_rhs_with(&*coeffs.at(t0)?, y, &k) * dt,
            Scheme::Rk4 => {
                let c1 = coeffs.at(t0 + dt)?;
                let cm = coeffs.at(t0 + 0.5 * dt)?;
                let c0 = coeffs.at(t0)?;
                let k1 = pi_rhs_with(&c1, y, &k);
                let k2 = pi_rhs_with(&cm, &(y + &k1 * (0.5 * dt)), &k);
                let k3 = pi_rhs_with(&cm, &(y + &k2 * (0.5 * dt)), &k);
                let k4 = pi_rhs_with(&c0, &(y + &k3 * dt), &k);
                y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
            }
        };
        let next = symmetrize(&next);
        if !is_finite(&next) {
            return Err(LqgError::Divergence { what: "Pi", t: t0, iteration });
        }
        pi[n] = next;
    }
    Ok(pi)
}

fn forward_sweep(
    problem: &LqgProblem,
    coeffs: &CoefficientSource<'_>,
    pi: &[DMatrix<f64>],
    scheme: Scheme,
    iteration: usize,
) -> Result<Vec<DMatrix<f64>>, LqgError> {
    let steps = problem.steps();
    let dt = problem.dt;
    let (dx, dz) = (problem.state_dim, problem.memory_dim);
    let f = |t: f64, c: &super::Coefficients, lam: &DMatrix<f64>, p: &DMatrix<f64>| -> Result<DMatrix<f64>, LqgError> {
        let k = inference_gain(lam, dx, dz).map_err(|e| at_time(e, t))?;
        Ok(lambda_rhs_with(c, lam, p, &k))
    };
    let mut lambda = Vec::with_capacity(steps + 1);
    lambda.push(symmetrize(&problem.lambda0));
    for n in 0..steps {
        let t0 = n as f64 * dt;
        let y = &lambda[n];
        let p = &pi[n + 1];
        let next = match scheme {
            Scheme::Euler => y + f(t0, &*coeffs.at(t0)?, y, p)? * dt,
            Scheme::Rk4 => {
                let c0 = coeffs.at(t0)?;
                let cm = coeffs.at(t0 + 0.5 * dt)?;
                let c1 = coeffs.at(t0 + dt)?;
                let k1 = f(t0, &c0, y, p)?;
                let k2 = f(t0 + 0.5 * dt, &cm, &(y + &k1 * (0.5 * dt)), p)?;
                let k3 = f(t0 + 0.5 * dt, &cm, &(y + &k2 * (0.5 * dt)), p)?;
                let k4 = f(t0 + dt, &c1, &(y + &k3 * dt), p)?;
                y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
            }
        };
        let next = symmetrize(&next);
        if !is_finite(&next) || !is_pd(&next) {
            return Err(LqgError::Divergence { what: "Lambda", t: t0 + dt, iteration });
        }
        lambda.push(next);
    }
    Ok(lambda)
}

/// Alternates backward sweeps for `Π` (with `Λ` from the previous iterate)
/// and forward sweeps for `Λ` (with `Π` from the previous iterate),
/// starting from an initial forward pass under `Π⁰`.
///
/// Each sweep is one iteration and produces a new control; its expected
/// cost is recorded. An increase beyond the monotonicity slack aborts.
pub fn fbsm_lqg(problem: &LqgProblem, options: &FbsmLqgOptions) -> Result<FbsmLqgResult, LqgError> {
    ensure_valid(problem)?;
    let coeffs = CoefficientSource::new(problem)?;
    let steps = problem.steps();
    let n = problem.dim();
    let psi = Arc::new(solve_psi(problem)?);
    let mu = Arc::new(solve_mu(problem, &psi)?);
    let times = problem.times();

    let pi0 = match &options.initial_pi {
        Some(p) => {
            if p.len() != steps + 1 || p.iter().any(|m| m.shape() != (n, n)) {
                return Err(LqgError::DimensionMismatch("initial Pi trajectory".into()));
            }
            p.iter().map(symmetrize).collect()
        }
        None => vec![DMatrix::zeros(n, n); steps + 1],
    };
    let lambda0 = forward_sweep(problem, &coeffs, &pi0, options.scheme, 0)?;
    let mut result = FbsmLqgResult {
        times,
        psi,
        mu,
        iterates: vec![LqgIterate { pi: Arc::new(pi0), lambda: Arc::new(lambda0) }],
        iterations: Vec::new(),
        converged: false,
    };
    let j0 = lqg_objective(problem, &result.gains(0))?;
    result.iterations.push(IterationRecord { k: 0, sweep: Sweep::Initial, objective: j0 });
    info!("fbsm-lqg k=0 J={j0}");

    for k in 1..=options.max_iters {
        let prev = result.iterates[k - 1].clone();
        let (sweep, iterate) = if k % 2 == 1 {
            let pi = backward_sweep(problem, &coeffs, &prev.lambda, options.scheme, k)?;
            (Sweep::Backward, LqgIterate { pi: Arc::new(pi), lambda: prev.lambda.clone() })
        } else {
            let lambda = forward_sweep(problem, &coeffs, &prev.pi, options.scheme, k)?;
            (Sweep::Forward, LqgIterate { pi: prev.pi.clone(), lambda: Arc::new(lambda) })
        };
        result.iterates.push(iterate);
        let j = lqg_objective(problem, &result.gains(k))?;
        let j_prev = result.iterations[k - 1].objective;
        result.iterations.push(IterationRecord { k, sweep, objective: j });
        debug!("fbsm-lqg k={k} {sweep:?} J={j}");
        if !j.is_finite() {
            return Err(LqgError::Divergence { what: "objective", t: f64::NAN, iteration: k });
        }
        if j > j_prev + options.monotonicity_slack * (1.0 + j_prev.abs()) {
            return Err(LqgError::Monotonicity { k, previous: j_prev, current: j });
        }
        result.converged = k >= 2 && (j - j_prev).abs() <= options.tol * (1.0 + j.abs());
        if result.converged && options.stop_early {
            break;
        }
    }
    info!(
        "fbsm-lqg finished after {} iterations, J={}, converged={}",
        result.iterations.len() - 1,
        result.final_objective(),
        result.converged
    );
    Ok(result)
}
