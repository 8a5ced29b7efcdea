//! The affine memory-feedback law and exact Gaussian moments of the cost.

use nalgebra::{DMatrix, DVector};

use super::rhs::{at_time, inference_gain, CoefficientSource, Coefficients};
use super::solve::GainTrajectory;
use super::LqgError;
use crate::problem::LqgProblem;

/// `u = M_n z + c_n` on `[t_n, t_{n+1})`, built from
/// `u = −R⁻¹Bᵀ(Π_{n+1}K(Λ_n)(s − μ_n) + Ψ_{n+1}μ_n)`.
///
/// `Π` and `Ψ` are read one node ahead of `Λ` and `μ`, the same stagger the
/// sweeps use when they update the control at `t` from `Π_{t+dt}`.
#[derive(Debug, Clone)]
pub struct LqgControlLaw {
    pub state_dim: usize,
    pub memory_dim: usize,
    pub control_dim: usize,
    pub times: Vec<f64>,
    pub gain: Vec<DMatrix<f64>>,
    pub offset: Vec<DVector<f64>>,
}

impl LqgControlLaw {
    pub fn new(problem: &LqgProblem, gains: &GainTrajectory) -> Result<Self, LqgError> {
        let steps = gains.steps();
        let n = problem.dim();
        let (dx, dz) = (problem.state_dim, problem.memory_dim);
        for (name, len) in [("Psi", gains.psi.len()), ("Pi", gains.pi.len()), ("Lambda", gains.lambda.len()), ("mu", gains.mu.len())] {
            if len != steps + 1 {
                return Err(LqgError::DimensionMismatch(format!("{name} has {len} nodes, expected {}", steps + 1)));
            }
        }
        let coeffs = CoefficientSource::new(problem)?;
        let mut gain = Vec::with_capacity(steps);
        let mut offset = Vec::with_capacity(steps);
        for i in 0..steps {
            let t = gains.times[i];
            let c = coeffs.at(t)?;
            let k = inference_gain(&gains.lambda[i], dx, dz).map_err(|e| at_time(e, t))?;
            let k_z = k.view((0, dx), (n, dz)).clone_owned();
            let pk = &gains.pi[i + 1] * &k_z;
            let m = -(&c.l * &pk);
            let mu_z = gains.mu[i].rows(dx, dz).clone_owned();
            let off = &c.l * (&pk * mu_z) - &c.l * (&gains.psi[i + 1] * &gains.mu[i]);
            gain.push(m);
            offset.push(off);
        }
        Ok(Self {
            state_dim: dx,
            memory_dim: dz,
            control_dim: problem.control_dim(),
            times: gains.times.clone(),
            gain,
            offset,
        })
    }

    fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn step_index(&self, t: f64) -> usize {
        let steps = self.gain.len();
        let raw = (t / self.dt()).floor();
        let mut n = if raw.is_finite() && raw > 0.0 { raw as usize } else { 0 };
        if n + 1 < self.times.len() && (self.times[n + 1] - t).abs() <= 1e-12 * self.horizon().max(1.0) {
            n += 1;
        }
        n.min(steps - 1)
    }

    /// Evaluates the law from the memory alone.
    pub fn control_from_memory(&self, t: f64, z: &[f64], out: &mut [f64]) {
        let n = self.step_index(t);
        let m = &self.gain[n];
        let c = &self.offset[n];
        for i in 0..self.control_dim {
            let mut v = c[i];
            for j in 0..self.memory_dim {
                v += m[(i, j)] * z[j];
            }
            out[i] = v;
        }
    }
}

/// `u(t, s)`; only the memory block of `s` is read.
pub fn lqg_control(law: &LqgControlLaw, t: f64, s: &[f64]) -> Result<DVector<f64>, LqgError> {
    let horizon = law.horizon();
    if !(t >= 0.0 && t <= horizon * (1.0 + 1e-12)) {
        return Err(LqgError::TimeOutOfRange { t, horizon });
    }
    if s.len() != law.state_dim + law.memory_dim {
        return Err(LqgError::DimensionMismatch(format!("state has length {}", s.len())));
    }
    let mut out = DVector::zeros(law.control_dim);
    law.control_from_memory(t, &s[law.state_dim..], out.as_mut_slice());
    Ok(out)
}

/// Mean, covariance and accumulated expected running cost of the closed
/// loop, at every node of the law's time grid.
#[derive(Debug, Clone)]
pub struct Moments {
    pub times: Vec<f64>,
    pub mean: Vec<DVector<f64>>,
    pub covariance: Vec<DMatrix<f64>>,
    pub running_cost: Vec<f64>,
    pub terminal_cost: f64,
}

impl Moments {
    pub fn objective(&self) -> f64 {
        self.running_cost.last().copied().unwrap_or(0.0) + self.terminal_cost
    }
}

struct Stage {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    cost: f64,
}

fn moment_rhs(c: &Coefficients, m_gain: &DMatrix<f64>, offset: &DVector<f64>, dx: usize, y: &Stage) -> Stage {
    let n = y.mean.len();
    let dz = n - dx;
    let mut closed = c.a.clone();
    let bm = &c.b * m_gain;
    let mut block = closed.view_mut((0, dx), (n, dz));
    block += &bm;
    let mean_dot = &closed * &y.mean + &c.b * offset;
    let ac = &closed * &y.cov;
    let cov_dot = &ac + ac.transpose() + &c.noise;
    let z_mean = y.mean.rows(dx, dz);
    let u_mean = m_gain * z_mean + offset;
    let cov_zz = y.cov.view((dx, dx), (dz, dz));
    let mrm = m_gain.transpose() * &c.r * m_gain;
    let cost = (&c.q * &y.cov).trace()
        + y.mean.dot(&(&c.q * &y.mean))
        + u_mean.dot(&(&c.r * &u_mean))
        + (mrm * cov_zz).trace();
    Stage { mean: mean_dot, cov: cov_dot, cost }
}

fn axpy(y: &Stage, k: &Stage, h: f64) -> Stage {
    Stage { mean: &y.mean + &k.mean * h, cov: &y.cov + &k.cov * h, cost: y.cost + k.cost * h }
}

/// Propagates the first two moments of `s` under `law` with RK4 and
/// integrates `E[sᵀQs + uᵀRu]` alongside.
pub fn lqg_moments(problem: &LqgProblem, law: &LqgControlLaw) -> Result<Moments, LqgError> {
    let coeffs = CoefficientSource::new(problem)?;
    let steps = law.gain.len();
    let dt = law.dt();
    let dx = problem.state_dim;
    let cov0 = problem
        .lambda0
        .clone()
        .try_inverse()
        .ok_or(LqgError::SingularBlock { t: 0.0 })?;
    let mut state = Stage { mean: problem.mu0.clone(), cov: cov0, cost: 0.0 };
    let mut out = Moments {
        times: law.times.clone(),
        mean: vec![state.mean.clone()],
        covariance: vec![state.cov.clone()],
        running_cost: vec![0.0],
        terminal_cost: 0.0,
    };
    for i in 0..steps {
        let t0 = law.times[i];
        let (g, o) = (&law.gain[i], &law.offset[i]);
        let c0 = coeffs.at(t0)?;
        let cm = coeffs.at(t0 + 0.5 * dt)?;
        let c1 = coeffs.at(t0 + dt)?;
        let k1 = moment_rhs(&c0, g, o, dx, &state);
        let k2 = moment_rhs(&cm, g, o, dx, &axpy(&state, &k1, 0.5 * dt));
        let k3 = moment_rhs(&cm, g, o, dx, &axpy(&state, &k2, 0.5 * dt));
        let k4 = moment_rhs(&c1, g, o, dx, &axpy(&state, &k3, dt));
        let mean = &state.mean + (k1.mean + k2.mean * 2.0 + k3.mean * 2.0 + k4.mean) * (dt / 6.0);
        let cov = &state.cov + (k1.cov + k2.cov * 2.0 + k3.cov * 2.0 + k4.cov) * (dt / 6.0);
        let cost = state.cost + (k1.cost + 2.0 * k2.cost + 2.0 * k3.cost + k4.cost) * (dt / 6.0);
        let cov = crate::linalg::symmetrize(&cov);
        if !cost.is_finite() || !crate::linalg::is_finite(&cov) {
            return Err(LqgError::Divergence { what: "moments", t: t0 + dt, iteration: 0 });
        }
        state = Stage { mean, cov, cost };
        out.mean.push(state.mean.clone());
        out.covariance.push(state.cov.clone());
        out.running_cost.push(state.cost);
    }
    out.terminal_cost = (&problem.p * &state.cov).trace() + state.mean.dot(&(&problem.p * &state.mean));
    Ok(out)
}

/// Expected cost of the law defined by `gains`, from exact Gaussian moments.
pub fn lqg_objective(problem: &LqgProblem, gains: &GainTrajectory) -> Result<f64, LqgError> {
    let law = LqgControlLaw::new(problem, gains)?;
    Ok(lqg_moments(problem, &law)?.objective())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::bundled_lqg;

    fn zero_gains(problem: &LqgProblem) -> GainTrajectory {
        let n = problem.dim();
        let steps = problem.steps();
        GainTrajectory {
            times: problem.times(),
            psi: vec![DMatrix::zeros(n, n); steps + 1],
            pi: vec![DMatrix::zeros(n, n); steps + 1],
            lambda: vec![problem.lambda0.clone(); steps + 1],
            mu: vec![problem.mu0.clone(); steps + 1],
        }
    }

    #[test]
    fn zero_cost_zero_gain_objective_vanishes() {
        let mut p = bundled_lqg();
        p.q = DMatrix::zeros(2, 2).into();
        p.horizon = 1.0;
        assert_eq!(lqg_objective(&p, &zero_gains(&p)).unwrap(), 0.0);
    }

    #[test]
    fn control_ignores_state_block() {
        let p = bundled_lqg();
        let mut g = zero_gains(&p);
        for (i, m) in g.pi.iter_mut().enumerate() {
            *m = DMatrix::from_row_slice(2, 2, &[1.0 + i as f64 * 1e-3, 0.3, 0.3, 0.7]);
        }
        g.lambda = vec![DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]); g.times.len()];
        g.mu = vec![DVector::from_vec(vec![0.2, -0.1]); g.times.len()];
        let law = LqgControlLaw::new(&p, &g).unwrap();
        let a = lqg_control(&law, 0.5, &[1.0, 1.0]).unwrap();
        let b = lqg_control(&law, 0.5, &[-7.0, 1.0]).unwrap();
        assert_eq!(a, b);
        let at_mean = lqg_control(&law, 0.5, &[0.0, -0.1]).unwrap();
        let n = law.step_index(0.5);
        let mu = &g.mu[n];
        let expected = -(&g.psi[n + 1] * mu);
        assert!((at_mean - expected).norm() < 1e-15);
    }

    #[test]
    fn control_matches_hand_evaluation() {
        // Π = I, Λ = [[2,1],[1,1]] → K = [[0,-1/2],[0,1]], Ψ = 0, μ = 0,
        // B = R = I: u = -ΠK s = -(-z/2, z) = (z/2, -z) for s = (1, 1).
        let p = bundled_lqg();
        let mut g = zero_gains(&p);
        g.pi = vec![DMatrix::identity(2, 2); g.times.len()];
        g.lambda = vec![DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]); g.times.len()];
        let law = LqgControlLaw::new(&p, &g).unwrap();
        let u = lqg_control(&law, 0.0, &[1.0, 1.0]).unwrap();
        assert_eq!(u.as_slice(), &[0.5, -1.0]);
        assert!(lqg_control(&law, 10.5, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn moments_match_open_loop_scalar() {
        // ds = dω, s0 ~ N(0,1): Var(s_t) = 1 + t, J = ∫ (1+t) dt = T + T²/2.
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        let p = LqgProblem {
            a: m(0.0).into(),
            b: m(1.0).into(),
            sigma: m(1.0).into(),
            q: m(1.0).into(),
            r: m(1.0).into(),
            p: m(0.0),
            mu0: DVector::zeros(1),
            lambda0: m(1.0),
            horizon: 2.0,
            dt: 0.1,
            state_dim: 1,
            memory_dim: 0,
        };
        let g = zero_gains(&p);
        let j = lqg_objective(&p, &g).unwrap();
        assert!((j - 4.0).abs() < 1e-12);
    }
}
