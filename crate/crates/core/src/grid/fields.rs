//! Tabulated control, density and value fields.
//!
//! Density and value fields can be stored in full or as checkpoints every
//! `stride` steps. Missing slices are regenerated from the nearest
//! checkpoint with the same control, which reproduces them bit for bit.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::geometry::Geometry;
use super::steps::{cost_slice, fp_step_into, hjb_step_with};
use super::generator::build_generator;
use super::{GridError, GridProblem};

/// Control `u(t_n, z)` for `n < N_t`, one vector per memory node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlField {
    pub steps: usize,
    pub horizon: f64,
    pub control_dim: usize,
    pub z_lower: Vec<f64>,
    pub z_upper: Vec<f64>,
    pub z_nodes: Vec<usize>,
    /// Layout `[n][z][j]`.
    pub values: Vec<f64>,
}

impl ControlField {
    pub fn constant(problem: &GridProblem, value: &[f64]) -> Self {
        let dx = problem.dynamics.state_dim;
        let g = &problem.grid;
        let du = problem.control_dim();
        let nz: usize = g.nodes[dx..].iter().product();
        let steps = g.time_steps;
        let mut values = Vec::with_capacity(steps * nz * du);
        for _ in 0..steps * nz {
            values.extend_from_slice(value);
        }
        Self {
            steps,
            horizon: g.horizon,
            control_dim: du,
            z_lower: g.lower[dx..].to_vec(),
            z_upper: g.upper[dx..].to_vec(),
            z_nodes: g.nodes[dx..].to_vec(),
            values,
        }
    }

    pub fn zeros(problem: &GridProblem) -> Self {
        Self::constant(problem, &vec![0.0; problem.control_dim()])
    }

    pub fn nz(&self) -> usize {
        self.z_nodes.iter().product()
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn slice(&self, n: usize) -> &[f64] {
        let w = self.nz() * self.control_dim;
        &self.values[n * w..(n + 1) * w]
    }

    pub fn slice_mut(&mut self, n: usize) -> &mut [f64] {
        let w = self.nz() * self.control_dim;
        &mut self.values[n * w..(n + 1) * w]
    }

    pub fn at(&self, n: usize, zi: usize) -> &[f64] {
        let du = self.control_dim;
        &self.slice(n)[zi * du..(zi + 1) * du]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Checks that this field lives on the problem's time and memory grid.
    pub fn matches(&self, problem: &GridProblem) -> bool {
        let dx = problem.dynamics.state_dim;
        let g = &problem.grid;
        self.steps == g.time_steps
            && self.control_dim == problem.control_dim()
            && self.z_nodes == g.nodes[dx..]
            && self.values.len() == self.steps * self.nz() * self.control_dim
            && (self.horizon - g.horizon).abs() <= 1e-12 * g.horizon
            && self.z_lower.iter().zip(&g.lower[dx..]).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + b.abs()))
            && self.z_upper.iter().zip(&g.upper[dx..]).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + b.abs()))
    }

    /// Step index for `t`: piecewise constant from the left, `T` in the last step.
    pub fn step_index(&self, t: f64) -> usize {
        let dt = self.dt();
        let raw = (t / dt).floor();
        let mut n = if raw.is_finite() && raw > 0.0 { raw as usize } else { 0 };
        if ((n + 1) as f64 * dt - t).abs() <= 1e-12 * self.horizon.max(1.0) {
            n += 1;
        }
        n.min(self.steps - 1)
    }

    /// The same control function on another problem's time and memory
    /// grid, read off at the left end of each target step.
    pub fn resample(&self, problem: &GridProblem) -> Self {
        let mut out = Self::zeros(problem);
        let geom_dx = problem.dynamics.state_dim;
        let g = &problem.grid;
        let dz = g.nodes.len() - geom_dx;
        let h: Vec<f64> = (geom_dx..g.nodes.len())
            .map(|i| (g.upper[i] - g.lower[i]) / (g.nodes[i] - 1) as f64)
            .collect();
        let nz = out.nz();
        let du = out.control_dim;
        let dt = out.dt();
        let mut z = vec![0.0; dz];
        for n in 0..out.steps {
            let t = n as f64 * dt;
            for zi in 0..nz {
                let mut rest = zi;
                for i in 0..dz {
                    let m = out.z_nodes[i];
                    z[i] = out.z_lower[i] + (rest % m) as f64 * h[i];
                    rest /= m;
                }
                let off = (n * nz + zi) * du;
                self.interpolate(t, &z, &mut out.values[off..off + du]);
            }
        }
        out
    }

    /// Multilinear in `z`, piecewise constant in `t`. Memory values outside
    /// the grid are clamped to the boundary; returns whether that happened.
    pub fn interpolate(&self, t: f64, z: &[f64], out: &mut [f64]) -> bool {
        let n = self.step_index(t);
        let slice = self.slice(n);
        let dz = self.z_nodes.len();
        let du = self.control_dim;
        let mut clamped = false;
        let mut base = 0usize;
        let mut stride = 1usize;
        let mut fracs = [0.0f64; 3];
        let mut strides = [0usize; 3];
        for i in 0..dz {
            let m = self.z_nodes[i];
            let h = (self.z_upper[i] - self.z_lower[i]) / (m - 1) as f64;
            let mut pos = (z[i] - self.z_lower[i]) / h;
            if !(pos >= 0.0) {
                clamped |= pos < 0.0 || pos.is_nan();
                pos = 0.0;
            }
            if pos > (m - 1) as f64 {
                clamped = true;
                pos = (m - 1) as f64;
            }
            let k = (pos.floor() as usize).min(m - 2);
            fracs[i] = pos - k as f64;
            strides[i] = stride;
            base += k * stride;
            stride *= m;
        }
        out[..du].fill(0.0);
        for corner in 0..(1usize << dz) {
            let mut weight = 1.0;
            let mut idx = base;
            for i in 0..dz {
                if corner >> i & 1 == 1 {
                    weight *= fracs[i];
                    idx += strides[i];
                } else {
                    weight *= 1.0 - fracs[i];
                }
            }
            if weight == 0.0 {
                continue;
            }
            for j in 0..du {
                out[j] += weight * slice[idx * du + j];
            }
        }
        clamped
    }
}

/// Storage policy for density and value fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Storage {
    /// Full storage when it fits in a fixed budget, checkpoints otherwise.
    #[default]
    Auto,
    Full,
    Checkpointed { stride: usize },
}

const FULL_STORAGE_BUDGET: usize = 256 << 20;

impl Storage {
    pub(crate) fn stride(self, steps: usize, len: usize) -> usize {
        match self {
            Storage::Full => 1,
            Storage::Checkpointed { stride } => stride.clamp(1, steps.max(1)),
            Storage::Auto => {
                if (steps + 1) * len * 8 <= FULL_STORAGE_BUDGET {
                    1
                } else {
                    ((steps as f64).sqrt().ceil() as usize).max(1)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Forward,
    Backward,
}

/// Slices kept at checkpoints (every slice when the stride is one).
#[derive(Debug, Clone)]
pub(crate) struct SliceStore {
    steps: usize,
    stride: usize,
    saved: Vec<Option<Arc<Vec<f64>>>>,
}

impl SliceStore {
    pub fn new(steps: usize, stride: usize) -> Self {
        Self { steps, stride, saved: vec![None; steps + 1] }
    }

    pub fn offer(&mut self, n: usize, slice: &[f64]) {
        if n % self.stride == 0 || n == self.steps {
            self.saved[n] = Some(Arc::new(slice.to_vec()));
        }
    }

    pub fn is_full(&self) -> bool {
        self.stride == 1
    }
}

/// `p(t_n, s)` under a fixed control.
#[derive(Debug, Clone)]
pub struct DensityField {
    pub(crate) problem: GridProblem,
    pub geometry: Arc<Geometry>,
    pub control: Arc<ControlField>,
    pub(crate) store: SliceStore,
}

/// `w(t_n, s)` under a fixed control.
#[derive(Debug, Clone)]
pub struct ValueField {
    pub(crate) problem: GridProblem,
    pub geometry: Arc<Geometry>,
    pub control: Arc<ControlField>,
    pub(crate) store: SliceStore,
}

impl DensityField {
    pub(crate) fn new(problem: GridProblem, geometry: Arc<Geometry>, control: Arc<ControlField>, store: SliceStore) -> Self {
        Self { problem, geometry, control, store }
    }

    pub fn steps(&self) -> usize {
        self.store.steps
    }

    pub fn cursor(&self) -> SliceCursor<'_> {
        SliceCursor::new(&self.problem, &self.geometry, &self.control, &self.store, Direction::Forward)
    }

    /// One slice, regenerated if needed.
    pub fn slice(&self, n: usize) -> Result<Vec<f64>, GridError> {
        Ok(self.cursor().get(n)?.to_vec())
    }

    /// Whether every slice is held in memory.
    pub fn is_full(&self) -> bool {
        self.store.is_full()
    }
}

impl ValueField {
    pub(crate) fn new(problem: GridProblem, geometry: Arc<Geometry>, control: Arc<ControlField>, store: SliceStore) -> Self {
        Self { problem, geometry, control, store }
    }

    pub fn steps(&self) -> usize {
        self.store.steps
    }

    pub fn cursor(&self) -> SliceCursor<'_> {
        SliceCursor::new(&self.problem, &self.geometry, &self.control, &self.store, Direction::Backward)
    }

    pub fn slice(&self, n: usize) -> Result<Vec<f64>, GridError> {
        Ok(self.cursor().get(n)?.to_vec())
    }

    pub fn is_full(&self) -> bool {
        self.store.is_full()
    }
}

/// Sequential reader over a field that caches one regenerated segment.
pub struct SliceCursor<'a> {
    problem: &'a GridProblem,
    geometry: &'a Geometry,
    control: &'a ControlField,
    store: &'a SliceStore,
    direction: Direction,
    seg_lo: usize,
    seg: Vec<Vec<f64>>,
}

impl<'a> SliceCursor<'a> {
    fn new(
        problem: &'a GridProblem,
        geometry: &'a Geometry,
        control: &'a ControlField,
        store: &'a SliceStore,
        direction: Direction,
    ) -> Self {
        Self { problem, geometry, control, store, direction, seg_lo: 0, seg: Vec::new() }
    }

    pub fn get(&mut self, n: usize) -> Result<&[f64], GridError> {
        if let Some(s) = &self.store.saved[n] {
            return Ok(s.as_slice());
        }
        if !(n >= self.seg_lo && n < self.seg_lo + self.seg.len()) {
            self.regenerate(n)?;
        }
        Ok(&self.seg[n - self.seg_lo])
    }

    fn regenerate(&mut self, n: usize) -> Result<(), GridError> {
        let geom = self.geometry;
        let dt = self.problem.dt();
        self.seg.clear();
        match self.direction {
            Direction::Forward => {
                let start = (0..n).rev().find(|&m| self.store.saved[m].is_some()).expect("slice 0 is always saved");
                let end = (n + 1..=self.store.steps).find(|&m| self.store.saved[m].is_some()).unwrap_or(self.store.steps + 1);
                let mut cur = self.store.saved[start].as_ref().unwrap().as_ref().clone();
                let mut next = vec![0.0; geom.len];
                let mut scratch = vec![0.0; geom.len];
                self.seg_lo = start + 1;
                for m in start..end - 1 {
                    let t = m as f64 * dt;
                    let gen = build_generator(self.problem, geom, t, self.control.slice(m))?;
                    fp_step_into(geom, &cur, &gen, dt, t, &mut next, &mut scratch)?;
                    std::mem::swap(&mut cur, &mut next);
                    self.seg.push(cur.clone());
                }
            }
            Direction::Backward => {
                let end = (n + 1..=self.store.steps).find(|&m| self.store.saved[m].is_some()).expect("final slice is always saved");
                let start = (0..n).rev().find(|&m| self.store.saved[m].is_some()).map_or(0, |m| m + 1);
                let mut cur = self.store.saved[end].as_ref().unwrap().as_ref().clone();
                let mut next = vec![0.0; geom.len];
                let mut cost = vec![0.0; geom.len];
                let mut rev = Vec::with_capacity(end - start);
                for m in (start..end).rev() {
                    let t = m as f64 * dt;
                    let u = self.control.slice(m);
                    let gen = build_generator(self.problem, geom, t, u)?;
                    cost_slice(self.problem, geom, t, u, &mut cost);
                    hjb_step_with(&gen, &cost, &cur, dt, t, &mut next)?;
                    std::mem::swap(&mut cur, &mut next);
                    rev.push(cur.clone());
                }
                rev.reverse();
                self.seg_lo = start;
                self.seg = rev;
            }
        }
        Ok(())
    }
}
