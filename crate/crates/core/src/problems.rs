//! Ready-made problems: the scalar LQG benchmark with memory, the obstacle
//! problem, a short-horizon LQG used to compare both backends, and the
//! conversion of an LQG problem to the grid backend.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::grid::{ControlStructure, GridError, GridProblem};
use crate::problem::{
    assemble_extended_dynamics, CostSpec, ExtendedDynamics, GridSpec, InitialDistribution, LqgProblem, MatrixFn,
    ProblemError, RawDims, RawPoscSpec, TimeMatrix, VectorFn,
};

/// `dx = (x + u)dt + dω`, `dz = v dt + dy` with `dy = x dt + dν`, cost
/// `∫ x² + u² + v² dt` on `[0, 10]`, standard normal `x₀` and `z₀`.
pub fn bundled_lqg() -> LqgProblem {
    LqgProblem {
        a: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]).into(),
        b: DMatrix::identity(2, 2).into(),
        sigma: DMatrix::identity(2, 2).into(),
        q: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])).into(),
        r: DMatrix::identity(2, 2).into(),
        p: DMatrix::zeros(2, 2),
        mu0: DVector::zeros(2),
        lambda0: DMatrix::identity(2, 2),
        horizon: 10.0,
        dt: 0.01,
        state_dim: 1,
        memory_dim: 1,
    }
}

/// The benchmark above written as a raw state/observation/memory system.
pub fn bundled_lqg_raw() -> RawPoscSpec {
    RawPoscSpec {
        dims: RawDims { state: 1, observation: 1, memory: 1, state_control: 1, memory_control: 1 },
        state_drift: VectorFn::new(1, |_, x, u, out| out[0] = x[0] + u[0]),
        state_diffusion: MatrixFn::identity(1),
        observation_drift: VectorFn::new(1, |_, x, _, out| out[0] = x[0]),
        observation_noise: MatrixFn::identity(1),
        memory_drift: VectorFn::new(1, |_, _, v, out| out[0] = v[0]),
        observation_gain: MatrixFn::identity(1),
        memory_noise: MatrixFn::empty(1),
        initial_state: InitialDistribution::isotropic(0.0, 1.0, 1),
        initial_memory: InitialDistribution::isotropic(0.0, 1.0, 1),
    }
}

/// Scalar state and memory on `[0, 1]`, used to compare the two backends.
///
/// `dx = (u_x)dt + ½dω`, `dz = (x − z + u_z)dt + ½dν`, cost
/// `∫ x² + |u|² dt + x_T²`, `x₀ ~ N(0.5, 1/16)`, `z₀ ~ N(0, 1/16)`.
pub fn crosscheck_lqg() -> LqgProblem {
    LqgProblem {
        a: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, -1.0]).into(),
        b: DMatrix::identity(2, 2).into(),
        sigma: (DMatrix::identity(2, 2) * 0.5).into(),
        q: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])).into(),
        r: DMatrix::identity(2, 2).into(),
        p: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])),
        mu0: DVector::from_vec(vec![0.5, 0.0]),
        lambda0: DMatrix::identity(2, 2) * 16.0,
        horizon: 1.0,
        dt: 0.001,
        state_dim: 1,
        memory_dim: 1,
    }
}

/// Parameters of the obstacle family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObstacleParams {
    /// Running cost on the obstacles.
    pub height: f64,
    pub t_start: f64,
    pub t_end: f64,
    /// The obstacles cover `inner ≤ |x| ≤ outer`.
    pub inner: f64,
    pub outer: f64,
    pub terminal_weight: f64,
    pub control_weight: f64,
    pub state_noise: f64,
    pub observation_noise: f64,
    /// Mean and variance of `(x₀, z₀)`.
    pub initial_mean: [f64; 2],
    pub initial_variance: [f64; 2],
    pub horizon: f64,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub nodes: [usize; 2],
    pub time_steps: usize,
    /// Average the obstacle cost over each grid cell in `x`.
    pub cell_average: bool,
}

impl Default for ObstacleParams {
    fn default() -> Self {
        Self {
            height: 1000.0,
            t_start: 0.3,
            t_end: 0.6,
            inner: 0.1,
            outer: 2.0,
            terminal_weight: 10.0,
            control_weight: 1.0,
            state_noise: 1.0,
            observation_noise: 1.0,
            initial_mean: [0.0, 0.0],
            initial_variance: [0.01, 0.01],
            horizon: 1.0,
            lower: [-3.0, -3.0],
            upper: [3.0, 3.0],
            nodes: [101, 101],
            time_steps: 2000,
            cell_average: true,
        }
    }
}

/// Slack on the time window so that grid times landing on its ends count.
const WINDOW_EPS: f64 = 1e-9;

impl ObstacleParams {
    pub fn active(&self, t: f64) -> bool {
        t >= self.t_start - WINDOW_EPS && t <= self.t_end + WINDOW_EPS
    }

    pub fn in_obstacle(&self, t: f64, x: f64) -> bool {
        self.active(t) && x.abs() >= self.inner && x.abs() <= self.outer
    }

    /// `Q(t, x)`.
    pub fn state_cost(&self, t: f64, x: f64) -> f64 {
        if self.in_obstacle(t, x) {
            self.height
        } else {
            0.0
        }
    }

    /// Average of `Q(t, ·)` over `[x − h/2, x + h/2]`.
    pub fn cell_state_cost(&self, t: f64, x: f64, h: f64) -> f64 {
        if !self.active(t) {
            return 0.0;
        }
        let (a, b) = (x - 0.5 * h, x + 0.5 * h);
        let overlap = |lo: f64, hi: f64| (b.min(hi) - a.max(lo)).max(0.0);
        let covered = overlap(self.inner, self.outer) + overlap(-self.outer, -self.inner);
        self.height * covered / h
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            lower: self.lower.to_vec(),
            upper: self.upper.to_vec(),
            nodes: self.nodes.to_vec(),
            time_steps: self.time_steps,
            horizon: self.horizon,
        }
    }

    /// State, observation and memory system with `dz = dy`.
    pub fn raw(&self) -> RawPoscSpec {
        let (sx, sy) = (self.state_noise, self.observation_noise);
        RawPoscSpec {
            dims: RawDims { state: 1, observation: 1, memory: 1, state_control: 1, memory_control: 0 },
            state_drift: VectorFn::new(1, |_, _, u, out| out[0] = u[0]),
            state_diffusion: MatrixFn::constant(DMatrix::from_element(1, 1, sx)),
            observation_drift: VectorFn::new(1, |_, x, _, out| out[0] = x[0]),
            observation_noise: MatrixFn::constant(DMatrix::from_element(1, 1, sy)),
            memory_drift: VectorFn::zero(1),
            observation_gain: MatrixFn::identity(1),
            memory_noise: MatrixFn::empty(1),
            initial_state: InitialDistribution::isotropic(self.initial_mean[0], self.initial_variance[0], 1),
            initial_memory: InitialDistribution::isotropic(self.initial_mean[1], self.initial_variance[1], 1),
        }
    }

    /// The assembled system with its drift and diffusion written out
    /// directly, which is much cheaper to evaluate on every grid node.
    pub fn dynamics(&self) -> Result<ExtendedDynamics, ProblemError> {
        let assembled = assemble_extended_dynamics(&self.raw())?;
        let (sx, sy) = (self.state_noise, self.observation_noise);
        Ok(ExtendedDynamics {
            drift: Arc::new(|_, s, u, out| {
                out[0] = u[0];
                out[1] = s[0];
            }),
            diffusion: Arc::new(move |_, _, _, out| {
                out.copy_from_slice(&[sx, 0.0, 0.0, sy]);
            }),
            ..assembled
        })
    }

    /// Pointwise cost, as used by the Monte Carlo estimator.
    pub fn cost(&self) -> CostSpec {
        let (run, term) = (self.clone(), self.terminal_weight);
        CostSpec::new(
            move |t, s, u| run.state_cost(t, s[0]) + run.control_weight * u[0] * u[0],
            move |s| term * s[0] * s[0],
        )
    }

    pub fn grid_problem(&self) -> Result<GridProblem, GridError> {
        let cell = self.clone();
        let cell_cost: Option<crate::grid::CellCostFn> = if self.cell_average {
            Some(Arc::new(move |t, s: &[f64], u: &[f64], h: &[f64]| {
                cell.cell_state_cost(t, s[0], h[0]) + cell.control_weight * u[0] * u[0]
            }))
        } else {
            None
        };
        let problem = GridProblem {
            dynamics: self.dynamics()?,
            cost: self.cost(),
            grid: self.grid_spec(),
            structure: ControlStructure::Affine {
                b: DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
                r: vec![self.control_weight],
            },
            control_domain: None,
            cell_cost,
        };
        problem.validate()?;
        Ok(problem)
    }
}

/// The obstacle problem with its default parameters.
pub fn obstacle_problem() -> Result<GridProblem, GridError> {
    ObstacleParams::default().grid_problem()
}

fn constant(m: &TimeMatrix, name: &str) -> Result<DMatrix<f64>, ProblemError> {
    match m {
        TimeMatrix::Constant(m) => Ok(m.clone()),
        TimeMatrix::Varying(_) => Err(ProblemError::Invalid(format!("{name} must be constant in time"))),
    }
}

/// Extended dynamics `ds = (As + Bu)dt + σdW` with `s₀ ~ N(μ₀, Λ₀⁻¹)`.
pub fn lqg_dynamics(problem: &LqgProblem) -> Result<ExtendedDynamics, ProblemError> {
    let d = problem.dim();
    let du = problem.control_dim();
    let nw = problem.noise_dim();
    let cov = problem
        .lambda0
        .clone()
        .try_inverse()
        .ok_or_else(|| ProblemError::Invalid("initial precision is singular".into()))?;
    let initial = InitialDistribution::gaussian(problem.mu0.clone(), crate::linalg::symmetrize(&cov));
    let (drift, diffusion): (crate::problem::FieldFn, crate::problem::FieldFn) =
        if problem.a.is_constant() && problem.b.is_constant() && problem.sigma.is_constant() {
            let a = problem.a.at(0.0);
            let b = problem.b.at(0.0);
            let sigma = problem.sigma.at(0.0);
            (
                Arc::new(move |_, s, u, out| {
                    for i in 0..d {
                        out[i] = (0..d).map(|j| a[(i, j)] * s[j]).sum::<f64>()
                            + (0..du).map(|j| b[(i, j)] * u[j]).sum::<f64>();
                    }
                }),
                Arc::new(move |_, _, _, out| {
                    for i in 0..d {
                        for l in 0..nw {
                            out[i * nw + l] = sigma[(i, l)];
                        }
                    }
                }),
            )
        } else {
            let (a, b, sigma) = (problem.a.clone(), problem.b.clone(), problem.sigma.clone());
            (
                Arc::new(move |t, s, u, out| {
                    let v = a.at(t) * DVector::from_column_slice(s) + b.at(t) * DVector::from_column_slice(u);
                    out.copy_from_slice(v.as_slice());
                }),
                Arc::new(move |t, _, _, out| {
                    let m = sigma.at(t);
                    for i in 0..d {
                        for l in 0..nw {
                            out[i * nw + l] = m[(i, l)];
                        }
                    }
                }),
            )
        };
    Ok(ExtendedDynamics {
        state_dim: problem.state_dim,
        memory_dim: problem.memory_dim,
        control_dim: du,
        noise_dim: nw,
        drift,
        diffusion,
        initial,
    })
}

/// Running cost `sᵀQs + uᵀRu` and terminal cost `sᵀPs`.
pub fn lqg_cost(problem: &LqgProblem) -> CostSpec {
    let (q, r, p) = (problem.q.clone(), problem.r.clone(), problem.p.clone());
    let quad = |m: &DMatrix<f64>, v: &[f64]| {
        let n = v.len();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += v[i] * m[(i, j)] * v[j];
            }
        }
        acc
    };
    CostSpec::new(
        move |t, s, u| {
            let (qm, rm) = (q.at(t), r.at(t));
            quad(&qm, s) + quad(&rm, u)
        },
        move |s| quad(&p, s),
    )
}

/// The LQG problem on the grid backend. Needs constant coefficients, a
/// diagonal `R`, and a `B` whose rows each involve at most one control.
pub fn lqg_grid_problem(problem: &LqgProblem, grid: GridSpec) -> Result<GridProblem, GridError> {
    let b = constant(&problem.b, "B")?;
    let r = constant(&problem.r, "R")?;
    let q = constant(&problem.q, "Q")?;
    constant(&problem.a, "A")?;
    constant(&problem.sigma, "sigma")?;
    let du = problem.control_dim();
    for i in 0..du {
        for j in 0..du {
            if i != j && r[(i, j)] != 0.0 {
                return Err(ProblemError::Invalid("R must be diagonal for the grid backend".into()).into());
            }
        }
    }
    if (grid.horizon - problem.horizon).abs() > 1e-12 * problem.horizon {
        return Err(ProblemError::Invalid("grid horizon differs from the problem horizon".into()).into());
    }
    let d = problem.dim();
    let quad = move |s: &[f64], u: &[f64]| {
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                acc += s[i] * q[(i, j)] * s[j];
            }
        }
        acc + (0..du).map(|j| r[(j, j)] * u[j] * u[j]).sum::<f64>()
    };
    let p = problem.p.clone();
    let cost = CostSpec::new(
        move |_, s, u| quad(s, u),
        move |s| {
            let mut acc = 0.0;
            for i in 0..d {
                for j in 0..d {
                    acc += s[i] * p[(i, j)] * s[j];
                }
            }
            acc
        },
    );
    let rdiag = (0..du).map(|j| constant(&problem.r, "R").map(|r| r[(j, j)])).collect::<Result<Vec<_>, _>>()?;
    let out = GridProblem {
        dynamics: lqg_dynamics(problem)?,
        cost,
        grid,
        structure: ControlStructure::Affine { b, r: rdiag },
        control_domain: None,
        cell_cost: None,
    };
    out.validate()?;
    Ok(out)
}
