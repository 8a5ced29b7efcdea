//! Euler–Maruyama simulation of the closed loop and Monte Carlo estimates.
//!
//! Every path draws from its own ChaCha8 stream, selected by the path
//! index under a common seed, so ensembles do not depend on how paths are
//! scheduled.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::ControlField;
use crate::lqg::LqgControlLaw;
use crate::problem::{CostSpec, ExtendedDynamics};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation setup: {0}")]
    Invalid(String),
    #[error("controller produces {got} components, dynamics expect {expected}")]
    ControlDimension { got: usize, expected: usize },
}

/// A memory-feedback controller. Only the memory block is ever passed in.
pub trait Controller: Send + Sync {
    fn control_dim(&self) -> usize;
    /// Writes `u(t, z)`; returns true when `z` had to be clamped.
    fn control(&self, t: f64, z: &[f64], out: &mut [f64]) -> bool;
}

impl Controller for LqgControlLaw {
    fn control_dim(&self) -> usize {
        self.control_dim
    }

    fn control(&self, t: f64, z: &[f64], out: &mut [f64]) -> bool {
        self.control_from_memory(t, z, out);
        false
    }
}

impl Controller for ControlField {
    fn control_dim(&self) -> usize {
        self.control_dim
    }

    fn control(&self, t: f64, z: &[f64], out: &mut [f64]) -> bool {
        self.interpolate(t, z, out)
    }
}

/// `u ≡ 0`.
pub struct ZeroController(pub usize);

impl Controller for ZeroController {
    fn control_dim(&self) -> usize {
        self.0
    }

    fn control(&self, _t: f64, _z: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        false
    }
}

pub type RegionFn = Arc<dyn Fn(f64, &[f64]) -> bool + Send + Sync>;

#[derive(Clone)]
pub struct SimulationOptions {
    pub n_paths: usize,
    pub seed: u64,
    pub dt: f64,
    pub horizon: f64,
    /// Keep every `record_stride`-th state (and the final one); 0 keeps none.
    pub record_stride: usize,
    /// Region whose occupation time is accumulated per path.
    pub region: Option<RegionFn>,
    /// Box `[lower, upper]` with reflecting walls, the continuous counterpart
    /// of a grid's zero-flux boundary. `None` simulates on all of `R^d`.
    pub reflect: Option<(Vec<f64>, Vec<f64>)>,
}

impl SimulationOptions {
    pub fn new(n_paths: usize, seed: u64, dt: f64, horizon: f64) -> Self {
        Self { n_paths, seed, dt, horizon, record_stride: 0, region: None, reflect: None }
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub n_paths: usize,
    pub dim: usize,
    pub seed: u64,
    pub dt: f64,
    /// Times of the recorded states.
    pub times: Vec<f64>,
    /// `[path][record][component]`.
    pub states: Vec<f64>,
    /// Accumulated running cost at each recorded time, `[path][record]`.
    pub cumulative_cost: Vec<f64>,
    /// Running plus terminal cost per path.
    pub total_cost: Vec<f64>,
    /// Time spent in the region per path.
    pub occupancy: Vec<f64>,
    /// Per-path count of steps where the controller clamped `z`.
    pub clamp_counts: Vec<usize>,
    /// Paths that produced non-finite states.
    pub excluded: Vec<usize>,
}

impl PathEnsemble {
    pub fn records(&self) -> usize {
        self.times.len()
    }

    pub fn state(&self, path: usize, record: usize) -> &[f64] {
        let off = (path * self.records() + record) * self.dim;
        &self.states[off..off + self.dim]
    }

    pub fn included(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_paths).filter(move |p| !self.excluded.contains(p))
    }

    /// Sample mean and standard error of component `i` at record `r`.
    pub fn moment(&self, r: usize, i: usize) -> Estimate {
        Estimate::from_samples(self.included().map(|p| self.state(p, r)[i]))
    }

    /// Sample variance of component `i` at record `r`.
    pub fn variance(&self, r: usize, i: usize) -> f64 {
        let xs: Vec<f64> = self.included().map(|p| self.state(p, r)[i]).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    }

    pub fn mean_occupancy(&self) -> Estimate {
        Estimate::from_samples(self.included().map(|p| self.occupancy[p]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(samples: impl IntoIterator<Item = f64>) -> Self {
        let xs: Vec<f64> = samples.into_iter().collect();
        let n = xs.len();
        if n == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN, n };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Self { mean, stderr: 0.0, n };
        }
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        Self { mean, stderr: (var / n as f64).sqrt(), n }
    }

    /// Whether `value` lies within `k` standard errors.
    pub fn agrees(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.stderr
    }
}

/// Euler–Maruyama with left-point running cost `Σ f(t_n, s_n, u_n)·dt` and
/// terminal cost `g(s_N)`.
pub fn simulate_paths(
    dynamics: &ExtendedDynamics,
    controller: &dyn Controller,
    cost: &CostSpec,
    options: &SimulationOptions,
) -> Result<PathEnsemble, SimError> {
    if options.n_paths == 0 {
        return Err(SimError::Invalid("path count must be positive".into()));
    }
    if !(options.dt > 0.0) || !(options.horizon > 0.0) {
        return Err(SimError::Invalid("time step and horizon must be positive".into()));
    }
    if controller.control_dim() != dynamics.control_dim {
        return Err(SimError::ControlDimension { got: controller.control_dim(), expected: dynamics.control_dim });
    }
    let dim = dynamics.dim();
    if let Some((lo, hi)) = &options.reflect {
        if lo.len() != dim || hi.len() != dim || lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
            return Err(SimError::Invalid(format!("reflecting box must give {dim} intervals with lower < upper")));
        }
    }
    let dx = dynamics.state_dim;
    let du = dynamics.control_dim;
    let nw = dynamics.noise_dim;
    let steps = options.steps();
    let dt = options.dt;
    let sqrt_dt = dt.sqrt();
    let stride = options.record_stride;
    let recorded: Vec<usize> = if stride == 0 {
        Vec::new()
    } else {
        let mut r: Vec<usize> = (0..=steps).step_by(stride).collect();
        if *r.last().unwrap() != steps {
            r.push(steps);
        }
        r
    };
    let times: Vec<f64> = recorded.iter().map(|&n| n as f64 * dt).collect();
    let sampler = dynamics.initial.sampler();

    let mut ens = PathEnsemble {
        n_paths: options.n_paths,
        dim,
        seed: options.seed,
        dt,
        times,
        states: Vec::with_capacity(options.n_paths * recorded.len() * dim),
        cumulative_cost: Vec::with_capacity(options.n_paths * recorded.len()),
        total_cost: vec![0.0; options.n_paths],
        occupancy: vec![0.0; options.n_paths],
        clamp_counts: vec![0; options.n_paths],
        excluded: Vec::new(),
    };

    let mut s = vec![0.0; dim];
    let mut u = vec![0.0; du];
    let mut b = vec![0.0; dim];
    let mut sigma = vec![0.0; dim * nw];
    let mut dw = vec![0.0; nw];
    for path in 0..options.n_paths {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        rng.set_stream(path as u64);
        sampler(&mut rng, &mut s);
        let mut running = 0.0;
        let mut occupancy = 0.0;
        let mut clamps = 0;
        let mut next_record = 0;
        let mut finite = true;
        for n in 0..=steps {
            if next_record < recorded.len() && recorded[next_record] == n {
                ens.states.extend_from_slice(&s);
                ens.cumulative_cost.push(running);
                next_record += 1;
            }
            if n == steps {
                break;
            }
            let t = n as f64 * dt;
            if controller.control(t, &s[dx..], &mut u) {
                clamps += 1;
            }
            running += (cost.running)(t, &s, &u) * dt;
            if let Some(region) = &options.region {
                if region(t, &s) {
                    occupancy += dt;
                }
            }
            (dynamics.drift)(t, &s, &u, &mut b);
            (dynamics.diffusion)(t, &s, &u, &mut sigma);
            for w in dw.iter_mut() {
                *w = rng.sample::<f64, _>(StandardNormal) * sqrt_dt;
            }
            for i in 0..dim {
                let mut acc = b[i] * dt;
                for l in 0..nw {
                    acc += sigma[i * nw + l] * dw[l];
                }
                s[i] += acc;
            }
            if let Some((lo, hi)) = &options.reflect {
                for (v, (&a, &b)) in s.iter_mut().zip(lo.iter().zip(hi)) {
                    *v = reflect_into(*v, a, b);
                }
            }
            if s.iter().any(|v| !v.is_finite()) {
                finite = false;
                break;
            }
        }
        if !finite {
            // Keep the record layout rectangular for excluded paths.
            while next_record < recorded.len() {
                ens.states.extend(std::iter::repeat(f64::NAN).take(dim));
                ens.cumulative_cost.push(f64::NAN);
                next_record += 1;
            }
            ens.excluded.push(path);
            ens.total_cost[path] = f64::NAN;
        } else {
            ens.total_cost[path] = running + (cost.terminal)(&s);
        }
        ens.occupancy[path] = occupancy;
        ens.clamp_counts[path] = clamps;
    }
    if !ens.excluded.is_empty() {
        log::warn!("{} of {} paths diverged and were excluded", ens.excluded.len(), ens.n_paths);
    }
    Ok(ens)
}

/// Mirror image of `v` in `[lo, hi]`, folding as often as needed.
fn reflect_into(v: f64, lo: f64, hi: f64) -> f64 {
    if !v.is_finite() || (lo..=hi).contains(&v) {
        return v;
    }
    let width = hi - lo;
    let r = (v - lo).rem_euclid(2.0 * width);
    lo + if r > width { 2.0 * width - r } else { r }
}

/// Mean and standard error of the per-path cost over the included paths.
pub fn estimate_objective(ensemble: &PathEnsemble) -> Estimate {
    Estimate::from_samples(ensemble.included().map(|p| ensemble.total_cost[p]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{InitialDistribution, VectorFn};
    use nalgebra::{DMatrix, DVector};

    fn scalar(drift: f64, noise: f64, x0_var: f64) -> ExtendedDynamics {
        let _ = VectorFn::zero(1);
        ExtendedDynamics {
            state_dim: 1,
            memory_dim: 0,
            control_dim: 1,
            noise_dim: 1,
            drift: Arc::new(move |_, s, _, out| out[0] = drift * s[0]),
            diffusion: Arc::new(move |_, _, _, out| out[0] = noise),
            initial: InitialDistribution::Gaussian {
                mean: DVector::from_element(1, 1.0),
                covariance: DMatrix::from_element(1, 1, x0_var),
            },
        }
    }

    #[test]
    fn exponential_growth_without_noise() {
        let dynamics = scalar(1.0, 0.0, 0.0);
        let mut opts = SimulationOptions::new(3, 1, 1e-4, 1.0);
        opts.record_stride = 10_000;
        let ens = simulate_paths(&dynamics, &ZeroController(1), &CostSpec::zero(), &opts).unwrap();
        let end = ens.state(0, ens.records() - 1)[0];
        assert!((end - 1f64.exp()).abs() / 1f64.exp() < 1e-3);
    }

    #[test]
    fn constant_paths_and_unit_running_cost() {
        let dynamics = scalar(0.0, 0.0, 0.0);
        let cost = CostSpec::new(|_, _, _| 1.0, |_| 0.0);
        let mut opts = SimulationOptions::new(4, 9, 0.01, 2.0);
        opts.record_stride = 50;
        let ens = simulate_paths(&dynamics, &ZeroController(1), &cost, &opts).unwrap();
        for r in 0..ens.records() {
            assert_eq!(ens.state(2, r)[0], 1.0);
        }
        let est = estimate_objective(&ens);
        assert!((est.mean - 2.0).abs() < 1e-12);
        assert!(est.stderr < 1e-12);
        let zero = simulate_paths(&dynamics, &ZeroController(1), &CostSpec::zero(), &opts).unwrap();
        let e = estimate_objective(&zero);
        assert_eq!((e.mean, e.stderr), (0.0, 0.0));
    }

    #[test]
    fn brownian_variance_grows_linearly() {
        let dynamics = scalar(0.0, 1.0, 0.5);
        let mut opts = SimulationOptions::new(10_000, 3, 0.01, 1.0);
        opts.record_stride = 100;
        let ens = simulate_paths(&dynamics, &ZeroController(1), &CostSpec::zero(), &opts).unwrap();
        let last = ens.records() - 1;
        let var = ens.variance(last, 0);
        // The sample variance of a Gaussian has standard error var·sqrt(2/(n-1)).
        let se = 1.5 * (2.0 / 9999.0f64).sqrt();
        assert!((var - 1.5).abs() <= 3.0 * se, "var={var}");
    }

    #[test]
    fn seeds_reproduce_and_differ() {
        let dynamics = scalar(0.2, 1.0, 1.0);
        let mut opts = SimulationOptions::new(20, 42, 0.01, 1.0);
        opts.record_stride = 7;
        let a = simulate_paths(&dynamics, &ZeroController(1), &CostSpec::zero(), &opts).unwrap();
        let b = simulate_paths(&dynamics, &ZeroController(1), &CostSpec::zero(), &opts).unwrap();
        assert_eq!(a.states, b.states);
        opts.seed = 43;
        let c = simulate_paths(&dynamics, &ZeroController(1), &CostSpec::zero(), &opts).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn rejects_empty_ensemble_and_bad_controller() {
        let dynamics = scalar(0.0, 1.0, 1.0);
        let opts = SimulationOptions::new(0, 1, 0.01, 1.0);
        assert!(simulate_paths(&dynamics, &ZeroController(1), &CostSpec::zero(), &opts).is_err());
        let opts = SimulationOptions::new(1, 1, 0.01, 1.0);
        assert!(simulate_paths(&dynamics, &ZeroController(2), &CostSpec::zero(), &opts).is_err());
    }
}
