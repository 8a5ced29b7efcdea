//! Sparse discrete generator of the controlled diffusion.

use smallvec::SmallVec;

use super::geometry::Geometry;
use super::{GridError, GridProblem};

/// Fraction of the explicit stability limit a step may use.
pub const CFL_SAFETY: f64 = 0.9;

/// Off-diagonal entries of one row.
pub(crate) type Rates = SmallVec<[(usize, f64); 12]>;

/// `L_u` in compressed-row form. Each row sums to zero.
#[derive(Debug, Clone)]
pub struct DiscreteGenerator {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
    /// Largest stable explicit step for this generator.
    pub max_dt: f64,
    /// Node that sets `max_dt`.
    pub binding_node: usize,
}

/// Rates of the continuous-time chain out of node `idx`, given the drift
/// `b` and diffusion tensor `d` (row-major) there.
pub(crate) fn node_rates(geom: &Geometry, idx: usize, b: &[f64], d: &[f64], out: &mut Rates) {
    out.clear();
    let dim = geom.dim();
    for i in 0..dim {
        let h = geom.h[i];
        let diff = 0.5 * d[i * dim + i] / (h * h);
        let up = geom.plus(idx, i);
        let down = geom.minus(idx, i);
        if let Some(j) = up {
            let r = diff + b[i].max(0.0) / h;
            if r != 0.0 {
                out.push((j, r));
            }
        }
        if let Some(j) = down {
            let r = diff + (-b[i]).max(0.0) / h;
            if r != 0.0 {
                out.push((j, r));
            }
        }
    }
    for i in 0..dim {
        for k in (i + 1)..dim {
            let dik = d[i * dim + k];
            if dik == 0.0 {
                continue;
            }
            let (Some(ip), Some(im)) = (geom.plus(idx, i), geom.minus(idx, i)) else { continue };
            let (Some(pp), Some(pm), Some(mp), Some(mm)) =
                (geom.plus(ip, k), geom.minus(ip, k), geom.plus(im, k), geom.minus(im, k))
            else {
                continue;
            };
            let c = dik / (4.0 * geom.h[i] * geom.h[k]);
            out.push((pp, c));
            out.push((mm, c));
            out.push((pm, -c));
            out.push((mp, -c));
        }
    }
}

/// `Σ_i D_ii/h_i² + Σ_i |b_i|/h_i`, the reciprocal of the explicit step limit.
pub(crate) fn rate_bound(geom: &Geometry, b: &[f64], d: &[f64]) -> f64 {
    let dim = geom.dim();
    (0..dim)
        .map(|i| d[i * dim + i] / (geom.h[i] * geom.h[i]) + b[i].abs() / geom.h[i])
        .sum()
}

/// `(L w)(idx)` from local coefficients; agrees with the assembled row.
pub(crate) fn local_apply(geom: &Geometry, idx: usize, b: &[f64], d: &[f64], w: &[f64], scratch: &mut Rates) -> f64 {
    node_rates(geom, idx, b, d, scratch);
    let wi = w[idx];
    scratch.iter().map(|&(j, r)| r * (w[j] - wi)).sum()
}

/// Evaluates drift and diffusion tensor at a node.
pub(crate) fn node_coefficients(
    problem: &GridProblem,
    t: f64,
    s: &[f64],
    u: &[f64],
    b: &mut [f64],
    d: &mut [f64],
    sigma: &mut [f64],
) {
    let dim = s.len();
    let nw = problem.dynamics.noise_dim;
    (problem.dynamics.drift)(t, s, u, b);
    (problem.dynamics.diffusion)(t, s, u, sigma);
    for i in 0..dim {
        for k in i..dim {
            let mut acc = 0.0;
            for l in 0..nw {
                acc += sigma[i * nw + l] * sigma[k * nw + l];
            }
            d[i * dim + k] = acc;
            d[k * dim + i] = acc;
        }
    }
}

impl DiscreteGenerator {
    /// `out = L w`.
    pub fn apply(&self, w: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * w[self.cols[k]];
            }
            out[i] = acc;
        }
    }

    /// `out = Lᵀ p`, the exact transpose of [`apply`](Self::apply).
    pub fn apply_transpose(&self, p: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.n {
            let pi = p[i];
            if pi == 0.0 {
                continue;
            }
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[self.cols[k]] += self.vals[k] * pi;
            }
        }
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.vals[self.row_ptr[i]..self.row_ptr[i + 1]].iter().sum()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        (self.row_ptr[i]..self.row_ptr[i + 1])
            .filter(|&k| self.cols[k] == j)
            .map(|k| self.vals[k])
            .sum()
    }

    pub fn is_zero(&self) -> bool {
        self.vals.iter().all(|v| *v == 0.0)
    }

    /// Fails when `dt` exceeds the stability limit, naming the binding cell.
    pub fn check_step(&self, geom: &Geometry, t: f64, dt: f64) -> Result<(), GridError> {
        if dt > self.max_dt {
            return Err(GridError::Stability {
                t,
                dt,
                max_dt: self.max_dt,
                node: geom.coord_slice(self.binding_node).to_vec(),
            });
        }
        Ok(())
    }

    /// Assembles rows from per-node drift and diffusion tensors.
    pub fn from_coefficients(geom: &Geometry, b: &[f64], d: &[f64]) -> Self {
        let dim = geom.dim();
        let n = geom.len;
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(n * (2 * dim + 1));
        let mut vals = Vec::with_capacity(n * (2 * dim + 1));
        let mut rates = Rates::new();
        let mut worst = 0.0_f64;
        let mut binding = 0;
        row_ptr.push(0);
        for idx in 0..n {
            let bi = &b[idx * dim..(idx + 1) * dim];
            let di = &d[idx * dim * dim..(idx + 1) * dim * dim];
            node_rates(geom, idx, bi, di, &mut rates);
            let bound = rate_bound(geom, bi, di);
            if bound > worst {
                worst = bound;
                binding = idx;
            }
            let mut total = 0.0;
            for &(_, r) in &rates {
                total += r;
            }
            cols.push(idx);
            vals.push(-total);
            for &(j, r) in &rates {
                cols.push(j);
                vals.push(r);
            }
            row_ptr.push(cols.len());
        }
        let max_dt = if worst > 0.0 { CFL_SAFETY / worst } else { f64::INFINITY };
        Self { n, row_ptr, cols, vals, max_dt, binding_node: binding }
    }
}

/// Assembles `L_u` at time `t` for the control slice `u_t` (one control
/// vector per memory node), checking the explicit stability bound for the
/// problem's time step.
pub fn build_generator(problem: &GridProblem, geom: &Geometry, t: f64, u_t: &[f64]) -> Result<DiscreteGenerator, GridError> {
    let dim = geom.dim();
    let du = problem.control_dim();
    if u_t.len() != geom.nz * du {
        return Err(GridError::DimensionMismatch(format!(
            "control slice has {} entries, expected {}",
            u_t.len(),
            geom.nz * du
        )));
    }
    let mut b = vec![0.0; geom.len * dim];
    let mut d = vec![0.0; geom.len * dim * dim];
    let mut sigma = vec![0.0; dim * problem.dynamics.noise_dim];
    for idx in 0..geom.len {
        let zi = geom.memory_index(idx);
        let u = &u_t[zi * du..(zi + 1) * du];
        node_coefficients(
            problem,
            t,
            geom.coord_slice(idx),
            u,
            &mut b[idx * dim..(idx + 1) * dim],
            &mut d[idx * dim * dim..(idx + 1) * dim * dim],
            &mut sigma,
        );
    }
    if b.iter().chain(d.iter()).any(|v| !v.is_finite()) {
        return Err(GridError::NonFinite { what: "drift or diffusion", t });
    }
    let gen = DiscreteGenerator::from_coefficients(geom, &b, &d);
    gen.check_step(geom, t, problem.dt())?;
    Ok(gen)
}
