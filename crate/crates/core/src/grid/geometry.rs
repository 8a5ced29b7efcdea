//! Node layout of the tensor grid.

use crate::problem::GridSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nodes: Vec<usize>,
    pub h: Vec<f64>,
    pub strides: Vec<usize>,
    pub state_dim: usize,
    pub memory_dim: usize,
    /// Total node count.
    pub len: usize,
    /// Nodes per memory slice.
    pub nx: usize,
    /// Number of memory nodes.
    pub nz: usize,
    /// Volume attached to each node.
    pub vol: f64,
    pub vol_x: f64,
    pub vol_z: f64,
    coords: Vec<f64>,
    /// Per-node axis indices, `[idx * dim + i]`.
    axes: Vec<u32>,
}

impl Geometry {
    pub fn new(spec: &GridSpec, state_dim: usize, memory_dim: usize) -> Self {
        let d = spec.nodes.len();
        debug_assert_eq!(d, state_dim + memory_dim);
        let h: Vec<f64> = (0..d)
            .map(|i| (spec.upper[i] - spec.lower[i]) / (spec.nodes[i] - 1) as f64)
            .collect();
        let mut strides = vec![1; d];
        for i in 1..d {
            strides[i] = strides[i - 1] * spec.nodes[i - 1];
        }
        let len: usize = spec.nodes.iter().product();
        let nx: usize = spec.nodes[..state_dim].iter().product();
        let nz = len / nx;
        let vol_x: f64 = h[..state_dim].iter().product();
        let vol_z: f64 = h[state_dim..].iter().product();
        let mut coords = vec![0.0; len * d];
        let mut axes = vec![0u32; len * d];
        for idx in 0..len {
            for i in 0..d {
                let k = (idx / strides[i]) % spec.nodes[i];
                coords[idx * d + i] = spec.lower[i] + k as f64 * h[i];
                axes[idx * d + i] = k as u32;
            }
        }
        Self {
            lower: spec.lower.clone(),
            upper: spec.upper.clone(),
            nodes: spec.nodes.clone(),
            h,
            strides,
            state_dim,
            memory_dim,
            len,
            nx,
            nz,
            vol: vol_x * vol_z,
            vol_x,
            vol_z,
            coords,
            axes,
        }
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn coords(&self, idx: usize, out: &mut [f64]) {
        let d = self.dim();
        out.copy_from_slice(&self.coords[idx * d..(idx + 1) * d]);
    }

    pub fn coord_slice(&self, idx: usize) -> &[f64] {
        let d = self.dim();
        &self.coords[idx * d..(idx + 1) * d]
    }

    /// Index along dimension `i`.
    pub fn axis_index(&self, idx: usize, i: usize) -> usize {
        self.axes[idx * self.nodes.len() + i] as usize
    }

    pub fn plus(&self, idx: usize, i: usize) -> Option<usize> {
        (self.axis_index(idx, i) + 1 < self.nodes[i]).then(|| idx + self.strides[i])
    }

    pub fn minus(&self, idx: usize, i: usize) -> Option<usize> {
        (self.axis_index(idx, i) > 0).then(|| idx - self.strides[i])
    }

    pub fn memory_index(&self, idx: usize) -> usize {
        idx / self.nx
    }

    /// Memory coordinates of memory node `zi`.
    pub fn memory_coords(&self, zi: usize) -> &[f64] {
        let s = self.coord_slice(zi * self.nx);
        &s[self.state_dim..]
    }

    /// Multi-index of memory node `zi` over the memory dimensions.
    pub fn memory_multi_index(&self, zi: usize) -> Vec<usize> {
        (self.state_dim..self.dim()).map(|i| self.axis_index(zi * self.nx, i)).collect()
    }

    /// Neighbouring memory nodes (one step along each memory axis).
    pub fn memory_neighbors(&self, zi: usize) -> impl Iterator<Item = usize> + '_ {
        let idx = zi * self.nx;
        (self.state_dim..self.dim()).flat_map(move |i| {
            [self.minus(idx, i), self.plus(idx, i)]
                .into_iter()
                .flatten()
                .map(|j| j / self.nx)
        })
    }

    /// Samples a function at every node.
    pub fn sample(&self, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
        (0..self.len).map(|i| f(self.coord_slice(i))).collect()
    }

    pub fn integrate(&self, v: &[f64]) -> f64 {
        crate::linalg::compensated_sum(v.iter().copied()) * self.vol
    }

    /// `Σ a·b·vol`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        crate::linalg::compensated_sum(a.iter().zip(b).map(|(x, y)| x * y)) * self.vol
    }

    /// Index of the node nearest to a time within the step grid.
    pub fn time_index(time: f64, dt: f64, steps: usize) -> usize {
        ((time / dt).round().max(0.0) as usize).min(steps)
    }
}
