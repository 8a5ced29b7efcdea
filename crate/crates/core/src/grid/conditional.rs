//! Conditional law of the state given the memory, slice by slice.

use super::geometry::Geometry;

/// Memory nodes whose marginal density falls below this are undefined.
pub const MARGINAL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ConditionalDensity {
    /// `p(x|z)` in the grid layout; zero on undefined slices.
    pub conditional: Vec<f64>,
    /// `p(z) = Σ_x p(x,z)·vol_x`, one entry per memory node.
    pub marginal: Vec<f64>,
    pub defined: Vec<bool>,
}

impl ConditionalDensity {
    /// Weights `p(x|z)·vol_x` of memory slice `zi`; they sum to one.
    pub fn weights(&self, geom: &Geometry, zi: usize) -> impl Iterator<Item = f64> + '_ {
        let vx = geom.vol_x;
        self.conditional[zi * geom.nx..(zi + 1) * geom.nx].iter().map(move |p| p * vx)
    }
}

pub fn conditional_density(geom: &Geometry, p: &[f64]) -> ConditionalDensity {
    let mut conditional = vec![0.0; geom.len];
    let mut marginal = vec![0.0; geom.nz];
    let mut defined = vec![false; geom.nz];
    for zi in 0..geom.nz {
        let block = &p[zi * geom.nx..(zi + 1) * geom.nx];
        let m = crate::linalg::compensated_sum(block.iter().copied()) * geom.vol_x;
        marginal[zi] = m;
        if m >= MARGINAL_FLOOR {
            defined[zi] = true;
            let out = &mut conditional[zi * geom.nx..(zi + 1) * geom.nx];
            for (o, v) in out.iter_mut().zip(block) {
                *o = v / m;
            }
        }
    }
    ConditionalDensity { conditional, marginal, defined }
}
