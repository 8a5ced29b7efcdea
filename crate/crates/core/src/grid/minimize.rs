//! Minimization of the conditional expected Hamiltonian at each memory node.

use std::collections::VecDeque;

use super::conditional::ConditionalDensity;
use super::generator::{local_apply, node_coefficients, Rates};
use super::geometry::Geometry;
use super::{ControlStructure, GridError, GridProblem};

const TIE_TOL: f64 = 1e-12;

/// Everything the minimizer needs at one time step: the problem, the time,
/// the value slice it acts on, and drift at zero control for the affine
/// branch.
pub struct SliceContext<'a> {
    pub problem: &'a GridProblem,
    pub geom: &'a Geometry,
    pub t: f64,
    pub w: &'a [f64],
    b0: Vec<f64>,
    candidates: Vec<Vec<f64>>,
}

impl<'a> SliceContext<'a> {
    pub fn new(problem: &'a GridProblem, geom: &'a Geometry, t: f64, w: &'a [f64]) -> Self {
        let dim = geom.dim();
        let du = problem.control_dim();
        let b0 = match problem.structure {
            ControlStructure::Affine { .. } => {
                let zero = vec![0.0; du];
                let mut b0 = vec![0.0; geom.len * dim];
                for idx in 0..geom.len {
                    (problem.dynamics.drift)(t, geom.coord_slice(idx), &zero, &mut b0[idx * dim..(idx + 1) * dim]);
                }
                b0
            }
            ControlStructure::General => Vec::new(),
        };
        let candidates = match (&problem.structure, &problem.control_domain) {
            (ControlStructure::General, Some(dom)) => dom.candidates(),
            _ => Vec::new(),
        };
        Self { problem, geom, t, w, b0, candidates }
    }
}

/// `E_{p(x|z)}[f(t,s,u) + (L_u w)(s)]` over memory slice `zi`, with
/// `weights[i] = p(x_i|z)·vol_x`.
pub fn expected_hamiltonian(ctx: &SliceContext<'_>, zi: usize, weights: &[f64], u: &[f64]) -> f64 {
    let geom = ctx.geom;
    let dim = geom.dim();
    let mut b = vec![0.0; dim];
    let mut d = vec![0.0; dim * dim];
    let mut sigma = vec![0.0; dim * ctx.problem.dynamics.noise_dim];
    let mut scratch = Rates::new();
    let mut acc = 0.0;
    for (i, &pi) in weights.iter().enumerate() {
        if pi == 0.0 {
            continue;
        }
        let idx = zi * geom.nx + i;
        let s = geom.coord_slice(idx);
        node_coefficients(ctx.problem, ctx.t, s, u, &mut b, &mut d, &mut sigma);
        let h = ctx.problem.node_cost(ctx.t, s, u, &geom.h) + local_apply(geom, idx, &b, &d, ctx.w, &mut scratch);
        acc += pi * h;
    }
    acc
}

struct Item {
    kink: f64,
    slope: f64,
    offset: f64,
    left: f64,
    right: f64,
}

/// Exact minimizer of the separable piecewise-quadratic
/// `φ(u) = R u² + Σ (c + a u)·(D⁺w or D⁻w)`, where the upwind side flips
/// at each kink `u = −c/a`.
fn minimize_piecewise(r: f64, items: &mut [Item], lo: f64, hi: f64, prev: f64) -> f64 {
    items.sort_by(|a, b| a.kink.total_cmp(&b.kink));
    let mut s = 0.0;
    let mut c = 0.0;
    for it in items.iter() {
        s += it.slope * it.left;
        c += it.offset * it.left;
    }
    let mut best_u = f64::NAN;
    let mut best_val = f64::INFINITY;
    let mut start = f64::NEG_INFINITY;
    for k in 0..=items.len() {
        let end = if k < items.len() { items[k].kink } else { f64::INFINITY };
        let a = start.max(lo);
        let b = end.min(hi);
        if a <= b {
            let u = (-s / (2.0 * r)).clamp(a, b);
            let val = r * u * u + s * u + c;
            if val < best_val {
                best_val = val;
                best_u = u;
            }
        }
        if k < items.len() {
            let it = &items[k];
            s += it.slope * (it.right - it.left);
            c += it.offset * (it.right - it.left);
            start = end;
        }
    }
    if prev.is_finite() && prev >= lo && prev <= hi {
        let mut prev_val = r * prev * prev;
        for it in items.iter() {
            let side = if prev > it.kink { it.right } else { it.left };
            prev_val += (it.offset + it.slope * prev) * side;
        }
        if prev_val <= best_val + TIE_TOL * (1.0 + best_val.abs()) {
            return prev;
        }
    }
    best_u
}

fn minimize_affine(ctx: &SliceContext<'_>, b: &nalgebra::DMatrix<f64>, r: &[f64], zi: usize, weights: &[f64], prev: &[f64], out: &mut [f64]) {
    let geom = ctx.geom;
    let dim = geom.dim();
    let du = r.len();
    let (lo, hi) = match &ctx.problem.control_domain {
        Some(dom) if dom.enforce_bounds => (dom.lower.clone(), dom.upper.clone()),
        _ => (vec![f64::NEG_INFINITY; du], vec![f64::INFINITY; du]),
    };
    let mut items = Vec::new();
    for j in 0..du {
        items.clear();
        for (i, &pi) in weights.iter().enumerate() {
            if pi == 0.0 {
                continue;
            }
            let idx = zi * geom.nx + i;
            for d in 0..dim {
                let bdj = b[(d, j)];
                if bdj == 0.0 {
                    continue;
                }
                let h = geom.h[d];
                let wi = ctx.w[idx];
                let dp = geom.plus(idx, d).map_or(0.0, |k| (ctx.w[k] - wi) / h);
                let dm = geom.minus(idx, d).map_or(0.0, |k| (wi - ctx.w[k]) / h);
                let b0 = ctx.b0[idx * dim + d];
                let (left, right) = if bdj > 0.0 { (dm, dp) } else { (dp, dm) };
                items.push(Item { kink: -b0 / bdj, slope: pi * bdj, offset: pi * b0, left, right });
            }
        }
        out[j] = minimize_piecewise(r[j], &mut items, lo[j], hi[j], prev[j]);
    }
}

fn minimize_candidates(ctx: &SliceContext<'_>, zi: usize, weights: &[f64], prev: &[f64], out: &mut [f64]) {
    let mut best = f64::INFINITY;
    let mut best_u: &[f64] = &ctx.candidates[0];
    for cand in &ctx.candidates {
        let v = expected_hamiltonian(ctx, zi, weights, cand);
        if v < best {
            best = v;
            best_u = cand;
        }
    }
    if prev.iter().all(|v| v.is_finite()) {
        let v = expected_hamiltonian(ctx, zi, weights, prev);
        if v <= best + TIE_TOL * (1.0 + best.abs()) {
            out.copy_from_slice(prev);
            return;
        }
    }
    out.copy_from_slice(best_u);
}

/// Minimizes over `u` at memory node `zi`. The affine branch is exact for
/// the discrete Hamiltonian; the general branch searches the candidate grid.
/// Either way the previous control is kept when it attains the minimum.
pub(crate) fn minimize_at(ctx: &SliceContext<'_>, zi: usize, weights: &[f64], prev: &[f64], out: &mut [f64]) {
    match &ctx.problem.structure {
        ControlStructure::Affine { b, r } => minimize_affine(ctx, b, r, zi, weights, prev, out),
        ControlStructure::General => minimize_candidates(ctx, zi, weights, prev, out),
    }
}

/// Stand-alone form: builds the per-step context and minimizes at one node.
pub fn minimize_conditional_hamiltonian(
    problem: &GridProblem,
    geom: &Geometry,
    t: f64,
    zi: usize,
    weights: &[f64],
    w_next: &[f64],
    prev: &[f64],
) -> Result<Vec<f64>, GridError> {
    if matches!(problem.structure, ControlStructure::General) && problem.control_domain.is_none() {
        return Err(GridError::NoMinimizer);
    }
    if weights.len() != geom.nx || w_next.len() != geom.len || prev.len() != problem.control_dim() {
        return Err(GridError::DimensionMismatch("minimizer inputs".into()));
    }
    let ctx = SliceContext::new(problem, geom, t, w_next);
    let mut out = vec![0.0; problem.control_dim()];
    minimize_at(&ctx, zi, weights, prev, &mut out);
    Ok(out)
}

/// Updates a whole control slice: minimizes where the conditional is
/// defined and copies from the nearest defined memory node elsewhere.
pub(crate) fn update_control_slice(ctx: &SliceContext<'_>, cond: &ConditionalDensity, prev: &[f64], out: &mut [f64]) {
    let geom = ctx.geom;
    let du = ctx.problem.control_dim();
    let mut weights = vec![0.0; geom.nx];
    for zi in 0..geom.nz {
        let range = zi * du..(zi + 1) * du;
        if cond.defined[zi] {
            for (w, v) in weights.iter_mut().zip(cond.weights(geom, zi)) {
                *w = v;
            }
            minimize_at(ctx, zi, &weights, &prev[range.clone()], &mut out[range]);
        }
    }
    fill_undefined(geom, &cond.defined, du, prev, out);
}

/// Breadth-first copy from defined memory nodes; with none defined the
/// previous slice is kept.
pub(crate) fn fill_undefined(geom: &Geometry, defined: &[bool], du: usize, prev: &[f64], out: &mut [f64]) {
    if defined.iter().all(|d| *d) {
        return;
    }
    if !defined.iter().any(|d| *d) {
        out.copy_from_slice(prev);
        return;
    }
    let mut done = defined.to_vec();
    let mut queue: VecDeque<usize> = (0..geom.nz).filter(|&z| defined[z]).collect();
    while let Some(z) = queue.pop_front() {
        let neighbors: Vec<usize> = geom.memory_neighbors(z).collect();
        for nb in neighbors {
            if !done[nb] {
                done[nb] = true;
                let (src, dst) = (z * du, nb * du);
                for j in 0..du {
                    out[dst + j] = out[src + j];
                }
                queue.push_back(nb);
            }
        }
    }
}
