//! Finite-difference backend for the coupled forward/backward PDE pair.
//!
//! The backward operator is discretized as the generator of a continuous-time
//! Markov chain on the grid nodes: upwind drift, three-point diffusion, central
//! cross stencils for off-diagonal diffusion, and rates that would leave the
//! box dropped (no-flux). The forward operator is its literal transpose.
//! Both equations are advanced with explicit Euler steps.
//!
//! Nodes are flattened with the state coordinates varying fastest, so a
//! memory node `z` owns the contiguous block `[z·N_x, (z+1)·N_x)`.

mod conditional;
mod fbsm;
pub(crate) mod fields;
pub(crate) mod generator;
mod geometry;
pub(crate) mod minimize;
pub(crate) mod steps;

use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::problem::{CostSpec, ExtendedDynamics, GridSpec, ProblemError};

pub use conditional::{conditional_density, ConditionalDensity, MARGINAL_FLOOR};
pub use fbsm::{fbsm_grid, FbsmGridOptions, FbsmGridResult, GridIterationRecord};
pub use fields::{ControlField, DensityField, SliceCursor, Storage, ValueField};
pub use generator::{build_generator, DiscreteGenerator};
pub use geometry::Geometry;
pub use minimize::{
    expected_hamiltonian, minimize_conditional_hamiltonian, SliceContext,
};
pub use steps::{
    fp_step, grid_objective, hjb_step, solve_fp, solve_hjb, FpStepReport, MassLog,
};

pub type CellCostFn = Arc<dyn Fn(f64, &[f64], &[f64], &[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Error)]
pub enum GridError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(
        "explicit step unstable at t={t}: dt={dt} exceeds the bound {max_dt} set by the cell at {node:?}"
    )]
    Stability { t: f64, dt: f64, max_dt: f64, node: Vec<f64> },
    #[error("negative density mass {mass:e} before clamping at t={t}")]
    NegativeMass { t: f64, mass: f64 },
    #[error("non-finite {what} at t={t}")]
    NonFinite { what: &'static str, t: f64 },
    #[error("no minimizer available: declare a control-affine structure or a candidate grid")]
    NoMinimizer,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// How the conditional expected Hamiltonian is minimized.
#[derive(Clone, Debug)]
pub enum ControlStructure {
    /// `b(t,s,u) = b(t,s,0) + B u`, `f(t,s,u) = f(t,s,0) + Σ_j R_j u_j²`,
    /// diffusion independent of `u`. Every row of `B` may involve at most one
    /// control component, which makes the discrete problem separable.
    Affine { b: DMatrix<f64>, r: Vec<f64> },
    /// No structure is assumed; only the candidate grid is searched.
    General,
}

/// Box bounds and candidate grid for the control.
#[derive(Clone, Debug)]
pub struct ControlDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Candidate points per control dimension.
    pub candidates_per_dim: usize,
    /// Whether the bounds also constrain the affine minimizer.
    pub enforce_bounds: bool,
}

impl ControlDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self { lower, upper, candidates_per_dim: 41, enforce_bounds: false }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Tensor grid of candidates, uniformly spaced on the bounds.
    pub fn candidates(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let m = self.candidates_per_dim.max(2);
        let total = m.pow(d as u32);
        (0..total)
            .map(|mut idx| {
                (0..d)
                    .map(|j| {
                        let i = idx % m;
                        idx /= m;
                        self.lower[j] + (self.upper[j] - self.lower[j]) * i as f64 / (m - 1) as f64
                    })
                    .collect()
            })
            .collect()
    }

    pub fn spacing(&self) -> Vec<f64> {
        let m = self.candidates_per_dim.max(2) as f64 - 1.0;
        self.lower.iter().zip(&self.upper).map(|(l, u)| (u - l) / m).collect()
    }
}

/// A problem for the grid backend: dynamics and cost on the extended state,
/// the grid, and what is known about the control's structure.
#[derive(Clone)]
pub struct GridProblem {
    pub dynamics: ExtendedDynamics,
    pub cost: CostSpec,
    pub grid: GridSpec,
    pub structure: ControlStructure,
    pub control_domain: Option<ControlDomain>,
    /// Replaces the pointwise running cost on the grid by a cell average,
    /// `cell_cost(t, s, u, h)`; the Monte Carlo side keeps using `cost`.
    pub cell_cost: Option<CellCostFn>,
}

impl std::fmt::Debug for GridProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GridProblem")
            .field("grid", &self.grid)
            .field("structure", &self.structure)
            .field("control_domain", &self.control_domain)
            .finish_non_exhaustive()
    }
}

impl GridProblem {
    pub fn control_dim(&self) -> usize {
        self.dynamics.control_dim
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt()
    }

    /// Running cost as seen by the grid at node coordinates `s`.
    pub fn node_cost(&self, t: f64, s: &[f64], u: &[f64], h: &[f64]) -> f64 {
        match &self.cell_cost {
            Some(c) => c(t, s, u, h),
            None => (self.cost.running)(t, s, u),
        }
    }

    /// Checks dimensions and, for the affine structure, the declared form on
    /// a sample of nodes.
    pub fn validate(&self) -> Result<Geometry, GridError> {
        self.grid.validate()?;
        let d = self.dynamics.dim();
        if self.grid.dim() != d {
            return Err(GridError::DimensionMismatch(format!(
                "grid has {} dimensions, dynamics {d}",
                self.grid.dim()
            )));
        }
        let du = self.control_dim();
        if let Some(dom) = &self.control_domain {
            if dom.dim() != du || dom.upper.len() != du {
                return Err(GridError::DimensionMismatch("control bounds vs control dimension".into()));
            }
            if dom.lower.iter().zip(&dom.upper).any(|(l, u)| !(l <= u)) {
                return Err(ProblemError::Invalid("control bounds not ordered".into()).into());
            }
        }
        let geom = Geometry::new(&self.grid, self.dynamics.state_dim, self.dynamics.memory_dim);
        match &self.structure {
            ControlStructure::Affine { b, r } => {
                if b.shape() != (d, du) || r.len() != du {
                    return Err(GridError::DimensionMismatch("affine structure shapes".into()));
                }
                if r.iter().any(|v| !(*v > 0.0)) {
                    return Err(ProblemError::Invalid("affine control cost must be positive".into()).into());
                }
                for i in 0..d {
                    if b.row(i).iter().filter(|v| **v != 0.0).count() > 1 {
                        return Err(ProblemError::Invalid(format!(
                            "drift row {i} mixes several control components"
                        ))
                        .into());
                    }
                }
                self.check_affine(&geom, b, r)?;
            }
            ControlStructure::General => {
                if self.control_domain.is_none() {
                    return Err(GridError::NoMinimizer);
                }
            }
        }
        Ok(geom)
    }

    fn check_affine(&self, geom: &Geometry, b: &DMatrix<f64>, r: &[f64]) -> Result<(), GridError> {
        let du = self.control_dim();
        let d = geom.dim();
        let probes: Vec<Vec<f64>> = vec![vec![0.7; du], (0..du).map(|j| -1.3 + 0.4 * j as f64).collect()];
        let stride = (geom.len / 7).max(1);
        let t = 0.5 * self.grid.horizon;
        let zero = vec![0.0; du];
        let mut s = vec![0.0; d];
        let mut out0 = vec![0.0; d];
        let mut out1 = vec![0.0; d];
        for idx in (0..geom.len).step_by(stride) {
            geom.coords(idx, &mut s);
            (self.dynamics.drift)(t, &s, &zero, &mut out0);
            let d0 = self.dynamics.diffusion_tensor(t, &s, &zero);
            let f0 = self.node_cost(t, &s, &zero, &geom.h);
            for u in &probes {
                (self.dynamics.drift)(t, &s, u, &mut out1);
                for i in 0..d {
                    let expect = out0[i] + (0..du).map(|j| b[(i, j)] * u[j]).sum::<f64>();
                    if (out1[i] - expect).abs() > 1e-9 * (1.0 + expect.abs()) {
                        return Err(ProblemError::Invalid(format!(
                            "drift is not affine with the declared B at s={s:?}"
                        ))
                        .into());
                    }
                }
                let d1 = self.dynamics.diffusion_tensor(t, &s, u);
                if crate::linalg::max_abs_diff(&d0, &d1) > 1e-12 * (1.0 + crate::linalg::max_abs(&d0)) {
                    return Err(ProblemError::Invalid("diffusion depends on the control".into()).into());
                }
                let f1 = self.node_cost(t, &s, u, &geom.h);
                let expect = f0 + u.iter().zip(r).map(|(v, rr)| rr * v * v).sum::<f64>();
                if (f1 - expect).abs() > 1e-9 * (1.0 + expect.abs()) {
                    return Err(ProblemError::Invalid(format!(
                        "running cost is not quadratic in u with the declared R at s={s:?}"
                    ))
                    .into());
                }
            }
        }
        Ok(())
    }
}
