//! Explicit Euler steps of the forward and backward equations, full solves
//! under a fixed control, and the discrete objective.

use std::sync::Arc;

use log::warn;

use super::fields::{ControlField, DensityField, SliceStore, Storage, ValueField};
use super::generator::{build_generator, DiscreteGenerator};
use super::geometry::Geometry;
use super::{GridError, GridProblem};

/// Pre-clamp negative mass that aborts a run.
pub const NEGATIVE_MASS_ABORT: f64 = 1e-6;
/// Pre-clamp negative mass that is logged.
pub const NEGATIVE_MASS_WARN: f64 = 1e-10;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FpStepReport {
    /// `Σ min(p,0)·vol` before clamping, as a positive number.
    pub negative_mass: f64,
    /// `Σ p·vol` after the step, before clamping and renormalizing.
    pub raw_mass: f64,
    /// `Σ p·vol` after renormalizing.
    pub mass: f64,
}

/// Worst per-step figures over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MassLog {
    pub steps: usize,
    pub max_negative_mass: f64,
    /// `max |Σ p·vol − 1|` before renormalizing.
    pub max_raw_mass_error: f64,
    /// `max |Σ p·vol − 1|` after renormalizing.
    pub max_mass_error: f64,
}

impl MassLog {
    pub fn record(&mut self, r: &FpStepReport) {
        self.steps += 1;
        self.max_negative_mass = self.max_negative_mass.max(r.negative_mass);
        self.max_raw_mass_error = self.max_raw_mass_error.max((r.raw_mass - 1.0).abs());
        self.max_mass_error = self.max_mass_error.max((r.mass - 1.0).abs());
    }

    pub fn merge(&mut self, other: &MassLog) {
        self.steps += other.steps;
        self.max_negative_mass = self.max_negative_mass.max(other.max_negative_mass);
        self.max_raw_mass_error = self.max_raw_mass_error.max(other.max_raw_mass_error);
        self.max_mass_error = self.max_mass_error.max(other.max_mass_error);
    }
}

/// `out = p + Lᵀp·dt`, then negatives clamped and mass renormalized.
pub(crate) fn fp_step_into(
    geom: &Geometry,
    p: &[f64],
    gen: &DiscreteGenerator,
    dt: f64,
    t: f64,
    out: &mut [f64],
    scratch: &mut [f64],
) -> Result<FpStepReport, GridError> {
    gen.apply_transpose(p, scratch);
    let mut negative = 0.0;
    for i in 0..out.len() {
        let v = p[i] + scratch[i] * dt;
        if !v.is_finite() {
            return Err(GridError::NonFinite { what: "density", t: t + dt });
        }
        if v < 0.0 {
            negative -= v;
        }
        out[i] = v;
    }
    let negative_mass = negative * geom.vol;
    let raw_mass = geom.integrate(out);
    if negative_mass > NEGATIVE_MASS_ABORT {
        return Err(GridError::NegativeMass { t: t + dt, mass: negative_mass });
    }
    if negative_mass > NEGATIVE_MASS_WARN {
        warn!("clamped negative density mass {negative_mass:e} at t={}", t + dt);
    }
    if negative_mass > 0.0 {
        for v in out.iter_mut() {
            *v = v.max(0.0);
        }
    }
    let mass = geom.integrate(out);
    if !(mass > 0.0) {
        return Err(GridError::NonFinite { what: "density mass", t: t + dt });
    }
    for v in out.iter_mut() {
        *v /= mass;
    }
    Ok(FpStepReport { negative_mass, raw_mass, mass: geom.integrate(out) })
}

/// One forward step of the Fokker-Planck equation.
pub fn fp_step(
    geom: &Geometry,
    p: &[f64],
    gen: &DiscreteGenerator,
    dt: f64,
    t: f64,
) -> Result<(Vec<f64>, FpStepReport), GridError> {
    gen.check_step(geom, t, dt)?;
    let mut out = vec![0.0; p.len()];
    let mut scratch = vec![0.0; p.len()];
    let report = fp_step_into(geom, p, gen, dt, t, &mut out, &mut scratch)?;
    Ok((out, report))
}

/// Running cost at every node for the control slice `u_t`.
pub(crate) fn cost_slice(problem: &GridProblem, geom: &Geometry, t: f64, u_t: &[f64], out: &mut [f64]) {
    let du = problem.control_dim();
    for idx in 0..geom.len {
        let zi = geom.memory_index(idx);
        out[idx] = problem.node_cost(t, geom.coord_slice(idx), &u_t[zi * du..(zi + 1) * du], &geom.h);
    }
}

/// `out = w_next + (f + L w_next)·dt`.
pub(crate) fn hjb_step_with(
    gen: &DiscreteGenerator,
    cost: &[f64],
    w_next: &[f64],
    dt: f64,
    t: f64,
    out: &mut [f64],
) -> Result<(), GridError> {
    gen.apply(w_next, out);
    for i in 0..out.len() {
        let v = w_next[i] + (cost[i] + out[i]) * dt;
        if !v.is_finite() {
            return Err(GridError::NonFinite { what: "value", t });
        }
        out[i] = v;
    }
    Ok(())
}

/// One backward step of the HJB equation under the control slice `u_t`.
pub fn hjb_step(problem: &GridProblem, geom: &Geometry, t: f64, u_t: &[f64], w_next: &[f64]) -> Result<Vec<f64>, GridError> {
    let gen = build_generator(problem, geom, t, u_t)?;
    let mut cost = vec![0.0; geom.len];
    cost_slice(problem, geom, t, u_t, &mut cost);
    let mut out = vec![0.0; geom.len];
    hjb_step_with(&gen, &cost, w_next, problem.dt(), t, &mut out)?;
    Ok(out)
}

/// Initial density sampled at the nodes and normalized.
pub(crate) fn initial_density(problem: &GridProblem, geom: &Geometry) -> Result<Vec<f64>, GridError> {
    let init = &problem.dynamics.initial;
    let mut p = geom.sample(|s| init.density(s));
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(GridError::NonFinite { what: "initial density", t: 0.0 });
    }
    let mass = geom.integrate(&p);
    if !(mass > 0.0) {
        return Err(GridError::NonFinite { what: "initial density mass", t: 0.0 });
    }
    p.iter_mut().for_each(|v| *v /= mass);
    Ok(p)
}

pub(crate) fn terminal_values(problem: &GridProblem, geom: &Geometry) -> Vec<f64> {
    let g = &problem.cost.terminal;
    geom.sample(|s| g(s))
}

/// Forward solve under `control`, returning the field, its objective and
/// the mass log.
pub(crate) fn solve_fp_with_objective(
    problem: &GridProblem,
    geom: &Arc<Geometry>,
    control: Arc<ControlField>,
    storage: Storage,
) -> Result<(DensityField, f64, MassLog), GridError> {
    let steps = problem.grid.time_steps;
    let dt = problem.dt();
    let mut store = SliceStore::new(steps, storage.stride(steps, geom.len));
    let mut p = initial_density(problem, geom)?;
    let mut next = vec![0.0; geom.len];
    let mut scratch = vec![0.0; geom.len];
    let mut cost = vec![0.0; geom.len];
    let mut log = MassLog::default();
    let mut running = 0.0;
    store.offer(0, &p);
    for n in 0..steps {
        let t = n as f64 * dt;
        let u = control.slice(n);
        let gen = build_generator(problem, geom, t, u)?;
        cost_slice(problem, geom, t, u, &mut cost);
        running += geom.inner(&cost, &p) * dt;
        let report = fp_step_into(geom, &p, &gen, dt, t, &mut next, &mut scratch)?;
        log.record(&report);
        std::mem::swap(&mut p, &mut next);
        store.offer(n + 1, &p);
    }
    let terminal = geom.inner(&terminal_values(problem, geom), &p);
    Ok((DensityField::new(problem.clone(), geom.clone(), control, store), running + terminal, log))
}

/// Solves the forward equation under a fixed control.
pub fn solve_fp(problem: &GridProblem, control: &ControlField, storage: Storage) -> Result<DensityField, GridError> {
    let geom = Arc::new(problem.validate()?);
    check_control(problem, control)?;
    Ok(solve_fp_with_objective(problem, &geom, Arc::new(control.clone()), storage)?.0)
}

/// Solves the backward equation under a fixed control.
pub fn solve_hjb(problem: &GridProblem, control: &ControlField, storage: Storage) -> Result<ValueField, GridError> {
    let geom = Arc::new(problem.validate()?);
    check_control(problem, control)?;
    solve_hjb_inner(problem, &geom, Arc::new(control.clone()), storage)
}

pub(crate) fn solve_hjb_inner(
    problem: &GridProblem,
    geom: &Arc<Geometry>,
    control: Arc<ControlField>,
    storage: Storage,
) -> Result<ValueField, GridError> {
    let steps = problem.grid.time_steps;
    let dt = problem.dt();
    let mut store = SliceStore::new(steps, storage.stride(steps, geom.len));
    let mut w = terminal_values(problem, geom);
    let mut next = vec![0.0; geom.len];
    let mut cost = vec![0.0; geom.len];
    store.offer(steps, &w);
    for n in (0..steps).rev() {
        let t = n as f64 * dt;
        let u = control.slice(n);
        let gen = build_generator(problem, geom, t, u)?;
        cost_slice(problem, geom, t, u, &mut cost);
        hjb_step_with(&gen, &cost, &w, dt, t, &mut next)?;
        std::mem::swap(&mut w, &mut next);
        store.offer(n, &w);
    }
    Ok(ValueField::new(problem.clone(), geom.clone(), control, store))
}

pub(crate) fn check_control(problem: &GridProblem, control: &ControlField) -> Result<(), GridError> {
    if !control.matches(problem) {
        return Err(GridError::DimensionMismatch("control field does not match the problem grid".into()));
    }
    Ok(())
}

/// `Σ_n Σ_s f(t_n,s,u(t_n,z))·p_n(s)·vol·dt + Σ_s g(s)·p_N(s)·vol`.
pub fn grid_objective(problem: &GridProblem, density: &DensityField, control: &ControlField) -> Result<f64, GridError> {
    let geom = &density.geometry;
    check_control(problem, control)?;
    let steps = problem.grid.time_steps;
    let dt = problem.dt();
    let mut cursor = density.cursor();
    let mut cost = vec![0.0; geom.len];
    let mut running = 0.0;
    for n in 0..steps {
        let t = n as f64 * dt;
        cost_slice(problem, geom, t, control.slice(n), &mut cost);
        running += geom.inner(&cost, cursor.get(n)?) * dt;
    }
    let terminal = geom.inner(&terminal_values(problem, geom), cursor.get(steps)?);
    Ok(running + terminal)
}
