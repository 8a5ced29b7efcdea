//! Executable checks of the convergence theory: operator conjugacy, the
//! cost-difference identity, monotone descent, stationarity of the
//! conditional Hamiltonian, and agreement of the two backends on an LQG
//! problem.
//!
//! Every check returns a plain report and can be turned into an
//! [`OracleReport`] with a hash of its inputs for the acceptance runner.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::generator::build_generator;
use crate::grid::minimize::{minimize_at, SliceContext};
use crate::grid::steps::{check_control, cost_slice, solve_fp_with_objective, solve_hjb_inner};
use crate::grid::{
    conditional_density, expected_hamiltonian, fbsm_grid, ControlField, DiscreteGenerator, FbsmGridOptions, Geometry,
    GridError, Storage,
};
use crate::lqg::{fbsm_lqg, lqg_moments, FbsmLqgOptions, LqgControlLaw, LqgError};
use crate::problem::{GridSpec, LqgProblem};
use crate::problems::lqg_grid_problem;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Lqg(#[from] LqgError),
    #[error("need at least two iterations, got {0}")]
    TooFewIterations(usize),
    #[error("grid does not cover 4 standard deviations in dimension {dim} at t={t}: needs [{lo}, {hi}]")]
    Coverage { dim: usize, t: f64, lo: f64, hi: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Uniform JSON form of an oracle outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub oracle: String,
    pub inputs_hash: String,
    pub residuals: BTreeMap<String, f64>,
    pub tolerance: f64,
    pub passed: bool,
}

impl OracleReport {
    pub fn new(oracle: &str, inputs_hash: String, residuals: &[(&str, f64)], checked: f64, tolerance: f64) -> Self {
        Self {
            oracle: oracle.to_string(),
            inputs_hash,
            residuals: residuals.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            tolerance,
            passed: checked <= tolerance,
        }
    }
}

/// SHA-256 over the bit patterns of the given arrays.
pub fn hash_inputs<'a>(parts: impl IntoIterator<Item = &'a [f64]>) -> String {
    let mut h = Sha256::new();
    for part in parts {
        h.update((part.len() as u64).to_le_bytes());
        for v in part {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn control_hash(u: &ControlField) -> String {
    let shape = [u.steps as f64, u.horizon, u.control_dim as f64];
    hash_inputs([&shape[..], &u.z_lower, &u.z_upper, &u.values])
}

/// `|⟨w, L†p⟩ − ⟨Lw, p⟩|` with volume-weighted inner products.
pub fn conjugacy_residual(gen: &DiscreteGenerator, geom: &Geometry, w: &[f64], p: &[f64]) -> Result<f64, VerifyError> {
    if w.len() != gen.n || p.len() != gen.n || geom.len != gen.n {
        return Err(VerifyError::DimensionMismatch("generator, w and p must share the grid".into()));
    }
    let mut lw = vec![0.0; gen.n];
    let mut ltp = vec![0.0; gen.n];
    gen.apply(w, &mut lw);
    gen.apply_transpose(p, &mut ltp);
    Ok((geom.inner(w, &ltp) - geom.inner(&lw, p)).abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Iteration whose objective went up.
    pub k: usize,
    pub previous: f64,
    pub current: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub iterations: usize,
    /// Largest `J^{k+1} − J^k` over all k (negative when strictly decreasing).
    pub worst_increase: f64,
    /// Iteration where `worst_increase` occurs.
    pub worst_k: usize,
    /// Increases beyond `slack·(1 + |J^k|)`.
    pub violations: Vec<Violation>,
    pub slack: f64,
    pub passed: bool,
}

impl MonotonicityReport {
    pub fn oracle(&self, objectives: &[f64]) -> OracleReport {
        let excess = self
            .violations
            .iter()
            .map(|v| v.current - v.previous)
            .fold(0.0_f64, f64::max);
        let mut r = OracleReport::new(
            "monotonicity",
            hash_inputs([objectives]),
            &[("worst_increase", self.worst_increase), ("violations", self.violations.len() as f64)],
            excess,
            0.0,
        );
        r.passed = self.passed;
        r
    }
}

/// Checks `J^{k+1} ≤ J^k + slack·(1 + |J^k|)` over an objective history.
pub fn monotonicity_check(objectives: &[f64], slack: f64) -> Result<MonotonicityReport, VerifyError> {
    if objectives.len() < 2 {
        return Err(VerifyError::TooFewIterations(objectives.len()));
    }
    let mut worst = f64::NEG_INFINITY;
    let mut worst_k = 1;
    let mut violations = Vec::new();
    for k in 1..objectives.len() {
        let (prev, cur) = (objectives[k - 1], objectives[k]);
        let inc = cur - prev;
        if inc > worst || !inc.is_finite() {
            worst = inc;
            worst_k = k;
        }
        if !(cur <= prev + slack * (1.0 + prev.abs())) {
            violations.push(Violation { k, previous: prev, current: cur });
        }
    }
    Ok(MonotonicityReport {
        iterations: objectives.len(),
        worst_increase: worst,
        worst_k,
        passed: violations.is_empty(),
        violations,
        slack,
    })
}

/// Both sides of the cost-difference identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub j_u: f64,
    pub j_u_prime: f64,
    /// `J[u] − J[u′]` from two forward solves.
    pub lhs: f64,
    /// `Σ_n dt·E_{p_n}[H(t_n, s, u_n, w′_n) − H(t_n, s, u′_n, w′_n)]`.
    pub rhs: f64,
    pub residual: f64,
    /// The same sum with `w′_{n+1}`, matching the explicit time stepping;
    /// this version holds to rounding.
    pub rhs_staggered: f64,
    pub residual_staggered: f64,
}

impl Lemma1Report {
    pub fn oracle(&self, u: &ControlField, u_prime: &ControlField, tolerance: f64) -> OracleReport {
        OracleReport::new(
            "lemma1",
            hash_inputs([&u.values[..], &u_prime.values[..]]),
            &[
                ("lhs", self.lhs),
                ("rhs", self.rhs),
                ("residual", self.residual),
                ("residual_staggered", self.residual_staggered),
            ],
            self.residual,
            tolerance,
        )
    }
}

/// Evaluates `J[u] − J[u′]` directly and through the Hamiltonian sum with
/// `p` solved under `u` and `w′` under `u′`.
pub fn lemma1_check(
    problem: &crate::grid::GridProblem,
    u: &ControlField,
    u_prime: &ControlField,
    storage: Storage,
) -> Result<Lemma1Report, VerifyError> {
    let geom = Arc::new(problem.validate()?);
    check_control(problem, u)?;
    check_control(problem, u_prime)?;
    let (p, j_u, _) = solve_fp_with_objective(problem, &geom, Arc::new(u.clone()), storage)?;
    let (_, j_u_prime, _) = solve_fp_with_objective(problem, &geom, Arc::new(u_prime.clone()), storage)?;
    let w = solve_hjb_inner(problem, &geom, Arc::new(u_prime.clone()), storage)?;
    let dt = problem.dt();
    let mut pc = p.cursor();
    let mut wc = w.cursor();
    let mut cost_u = vec![0.0; geom.len];
    let mut cost_v = vec![0.0; geom.len];
    let mut lw_u = vec![0.0; geom.len];
    let mut lw_v = vec![0.0; geom.len];
    let mut integrand = vec![0.0; geom.len];
    let (mut rhs, mut rhs_stag) = (0.0, 0.0);
    for n in 0..problem.grid.time_steps {
        let t = n as f64 * dt;
        let gen_u = build_generator(problem, &geom, t, u.slice(n))?;
        let gen_v = build_generator(problem, &geom, t, u_prime.slice(n))?;
        cost_slice(problem, &geom, t, u.slice(n), &mut cost_u);
        cost_slice(problem, &geom, t, u_prime.slice(n), &mut cost_v);
        let pn = pc.get(n)?.to_vec();
        for (which, m) in [(0, n), (1, n + 1)] {
            let wm = wc.get(m)?;
            gen_u.apply(wm, &mut lw_u);
            gen_v.apply(wm, &mut lw_v);
            for i in 0..geom.len {
                integrand[i] = cost_u[i] - cost_v[i] + lw_u[i] - lw_v[i];
            }
            let term = geom.inner(&integrand, &pn) * dt;
            if which == 0 {
                rhs += term;
            } else {
                rhs_stag += term;
            }
        }
    }
    let lhs = j_u - j_u_prime;
    Ok(Lemma1Report {
        j_u,
        j_u_prime,
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
        rhs_staggered: rhs_stag,
        residual_staggered: (lhs - rhs_stag).abs(),
    })
}

/// Stationarity gap of a control against its own density and value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmpReport {
    pub steps: usize,
    pub nz: usize,
    /// `E_{p(x|z)}[H(u)] − min_v E_{p(x|z)}[H(v)]` at `[n][z]`; zero where
    /// the conditional density is undefined.
    pub residual: Vec<f64>,
    /// Marginal memory density `p_n(z)` at `[n][z]`.
    pub marginal: Vec<f64>,
    /// `max_{n,z} residual·p_n(z)`.
    pub weighted_max: f64,
    /// `Σ_{n,z} residual·p_n(z)·vol_z·dt`.
    pub integrated: f64,
    /// Largest residual at any node where the conditional is defined.
    pub max: f64,
    pub objective: f64,
}

impl PmpReport {
    pub fn oracle(&self, u: &ControlField, tolerance: f64) -> OracleReport {
        OracleReport::new(
            "pmp",
            control_hash(u),
            &[("weighted_max", self.weighted_max), ("integrated", self.integrated), ("max", self.max)],
            self.weighted_max,
            tolerance,
        )
    }
}

/// Solves `p` and `w` under `u` and measures, at every time step and memory
/// node, how far `u` is from minimizing the conditional expected
/// Hamiltonian built from `w` at the next step.
pub fn pmp_residual(problem: &crate::grid::GridProblem, u: &ControlField, storage: Storage) -> Result<PmpReport, VerifyError> {
    let geom = Arc::new(problem.validate()?);
    check_control(problem, u)?;
    let control = Arc::new(u.clone());
    let (p, objective, _) = solve_fp_with_objective(problem, &geom, control.clone(), storage)?;
    let w = solve_hjb_inner(problem, &geom, control, storage)?;
    let steps = problem.grid.time_steps;
    let dt = problem.dt();
    let du = problem.control_dim();
    let nz = geom.nz;
    let mut residual = vec![0.0; steps * nz];
    let mut marginal = vec![0.0; steps * nz];
    let mut pc = p.cursor();
    let mut wc = w.cursor();
    let mut weights = vec![0.0; geom.nx];
    let mut best = vec![0.0; du];
    let nan = vec![f64::NAN; du];
    for n in 0..steps {
        let t = n as f64 * dt;
        let cond = conditional_density(&geom, pc.get(n)?);
        let w_next = wc.get(n + 1)?.to_vec();
        let ctx = SliceContext::new(problem, &geom, t, &w_next);
        for zi in 0..nz {
            marginal[n * nz + zi] = cond.marginal[zi];
            if !cond.defined[zi] {
                continue;
            }
            for (a, b) in weights.iter_mut().zip(cond.weights(&geom, zi)) {
                *a = b;
            }
            let current = expected_hamiltonian(&ctx, zi, &weights, u.at(n, zi));
            minimize_at(&ctx, zi, &weights, &nan, &mut best);
            let min = expected_hamiltonian(&ctx, zi, &weights, &best).min(current);
            residual[n * nz + zi] = current - min;
        }
    }
    let weighted: Vec<f64> = residual.iter().zip(&marginal).map(|(r, m)| r * m).collect();
    Ok(PmpReport {
        steps,
        nz,
        weighted_max: weighted.iter().fold(0.0_f64, |a, b| a.max(*b)),
        integrated: crate::linalg::compensated_sum(weighted.iter().copied()) * geom.vol_z * dt,
        max: residual.iter().fold(0.0_f64, |a, b| a.max(*b)),
        residual,
        marginal,
        objective,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrosscheckReport {
    pub j_lqg: f64,
    pub j_grid: f64,
    /// `|J_grid − J_lqg| / |J_lqg|`, or the absolute difference when `J_lqg = 0`.
    pub gap: f64,
    pub lqg_converged: bool,
    pub grid_converged: bool,
    pub nodes: Vec<usize>,
    pub time_steps: usize,
}

impl CrosscheckReport {
    pub fn oracle(&self, tolerance: f64) -> OracleReport {
        let shape: Vec<f64> = self.nodes.iter().map(|&n| n as f64).chain([self.time_steps as f64]).collect();
        OracleReport::new(
            "crosscheck",
            hash_inputs([shape.as_slice()]),
            &[("j_lqg", self.j_lqg), ("j_grid", self.j_grid), ("gap", self.gap)],
            self.gap,
            tolerance,
        )
    }
}

/// Runs both solvers on one LQG problem and compares converged objectives.
/// The grid must hold the closed-loop mean ± 4 standard deviations of the
/// LQG solution in every dimension at every time.
pub fn lqg_grid_crosscheck(
    lqg: &LqgProblem,
    grid: &GridSpec,
    lqg_options: &FbsmLqgOptions,
    grid_options: &FbsmGridOptions,
) -> Result<CrosscheckReport, VerifyError> {
    let res = fbsm_lqg(lqg, lqg_options)?;
    let gains = res.final_gains();
    let law = LqgControlLaw::new(lqg, &gains)?;
    let moments = lqg_moments(lqg, &law)?;
    if grid.lower.len() != lqg.dim() || grid.upper.len() != lqg.dim() {
        return Err(VerifyError::DimensionMismatch("grid and LQG dimensions differ".into()));
    }
    for (k, (m, c)) in moments.mean.iter().zip(&moments.covariance).enumerate() {
        for i in 0..lqg.dim() {
            let sd = c[(i, i)].max(0.0).sqrt();
            let (lo, hi) = (m[i] - 4.0 * sd, m[i] + 4.0 * sd);
            if lo < grid.lower[i] || hi > grid.upper[i] {
                return Err(VerifyError::Coverage { dim: i, t: moments.times[k], lo, hi });
            }
        }
    }
    let j_lqg = moments.objective();
    let problem = lqg_grid_problem(lqg, grid.clone())?;
    let out = fbsm_grid(&problem, &ControlField::zeros(&problem), grid_options)?;
    let j_grid = out.final_objective();
    let gap = if j_lqg == 0.0 { j_grid.abs() } else { (j_grid - j_lqg).abs() / j_lqg.abs() };
    Ok(CrosscheckReport {
        j_lqg,
        j_grid,
        gap,
        lqg_converged: res.converged,
        grid_converged: out.converged,
        nodes: grid.nodes.clone(),
        time_steps: grid.time_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotonicity_report() {
        let r = monotonicity_check(&[3.0, 2.0, 2.0, 1.5], 0.0).unwrap();
        assert!(r.passed);
        assert_eq!(r.worst_increase, 0.0);
        let r = monotonicity_check(&[3.0, 2.0, 2.5, 1.5], 1e-6).unwrap();
        assert!(!r.passed);
        assert_eq!(r.violations, vec![Violation { k: 2, previous: 2.0, current: 2.5 }]);
        assert_eq!(r.worst_k, 2);
        assert!(monotonicity_check(&[1.0], 0.0).is_err());
        assert!(monotonicity_check(&[0.0; 5], 0.0).unwrap().passed);
    }

    #[test]
    fn hashes_depend_on_values() {
        let a = hash_inputs([&[1.0, 2.0][..]]);
        let b = hash_inputs([&[1.0, 2.0000001][..]]);
        assert_ne!(a, b);
        assert_eq!(a.len(), 64);
        assert_ne!(hash_inputs([&[1.0][..], &[2.0][..]]), hash_inputs([&[1.0, 2.0][..]]));
    }
}
