//! The forward-backward sweep loop on the grid.

use std::sync::Arc;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use super::conditional::conditional_density;
use super::fields::{ControlField, DensityField, SliceStore, Storage, ValueField};
use super::generator::build_generator;
use super::minimize::{update_control_slice, SliceContext};
use super::steps::{
    check_control, cost_slice, fp_step_into, hjb_step_with, initial_density, solve_fp_with_objective,
    terminal_values, MassLog,
};
use super::{GridError, GridProblem};
use crate::lqg::Sweep;

#[derive(Debug, Clone)]
pub struct FbsmGridOptions {
    /// Number of sweeps after the initial forward pass.
    pub max_iters: usize,
    /// Relative tolerance on successive objectives.
    pub tol: f64,
    pub stop_early: bool,
    /// Relative slack on objective increases before a warning is recorded.
    pub monotonicity_slack: f64,
    pub storage: Storage,
    /// Keep the control of every iterate.
    pub keep_controls: bool,
}

impl Default for FbsmGridOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-6,
            stop_early: false,
            monotonicity_slack: 1e-6,
            storage: Storage::Auto,
            keep_controls: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridIterationRecord {
    pub k: usize,
    pub sweep: Sweep,
    pub objective: f64,
    /// `max |u^k − u^{k−1}|` over the whole field.
    pub control_change: f64,
}

#[derive(Debug, Clone)]
pub struct FbsmGridResult {
    pub control: ControlField,
    /// Density of the latest forward pass (under the control of that pass).
    pub density: DensityField,
    /// Value of the latest backward pass, if any.
    pub value: Option<ValueField>,
    pub iterations: Vec<GridIterationRecord>,
    pub converged: bool,
    pub mass_log: MassLog,
    /// Iterations whose objective rose by more than the slack.
    pub monotonicity_warnings: Vec<usize>,
    /// `u^1`, the control after the first backward sweep.
    pub first_iterate: Option<ControlField>,
    /// Every iterate's control when requested.
    pub controls: Vec<ControlField>,
}

impl FbsmGridResult {
    pub fn objectives(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.objective).collect()
    }

    pub fn final_objective(&self) -> f64 {
        self.iterations.last().map_or(f64::NAN, |r| r.objective)
    }
}

/// Runs the forward-backward sweep method from `u0`: an initial forward
/// pass, then alternating backward sweeps (control from the old density and
/// the new value) and forward sweeps (control from the new density and the
/// old value). Each sweep is one iteration.
pub fn fbsm_grid(problem: &GridProblem, u0: &ControlField, options: &FbsmGridOptions) -> Result<FbsmGridResult, GridError> {
    let geom = Arc::new(problem.validate()?);
    check_control(problem, u0)?;
    let steps = problem.grid.time_steps;
    let dt = problem.dt();
    let du = problem.control_dim();

    let (mut density, j0, mut mass_log) = solve_fp_with_objective(problem, &geom, Arc::new(u0.clone()), options.storage)?;
    let mut result_value: Option<ValueField> = None;
    let mut iterations = vec![GridIterationRecord { k: 0, sweep: Sweep::Initial, objective: j0, control_change: 0.0 }];
    let mut warnings = Vec::new();
    let mut converged = false;
    let mut first_iterate = None;
    let mut controls = if options.keep_controls { vec![u0.clone()] } else { Vec::new() };
    let mut u = u0.clone();
    let p0 = initial_density(problem, &geom)?;
    let g = terminal_values(problem, &geom);
    info!("fbsm-grid k=0 J={j0}");

    let mut next = vec![0.0; geom.len];
    let mut scratch = vec![0.0; geom.len];
    let mut cost = vec![0.0; geom.len];
    let mut prev_slice = vec![0.0; geom.nz * du];

    for k in 1..=options.max_iters {
        let mut change = 0.0_f64;
        let (sweep, objective) = if k % 2 == 1 {
            // Backward: u^{k}_t from p^{k-1}_t and w^{k}_{t+dt}; then w^{k}_t.
            let mut cursor = density.cursor();
            let mut store = SliceStore::new(steps, options.storage.stride(steps, geom.len));
            let mut w = g.clone();
            store.offer(steps, &w);
            for n in (0..steps).rev() {
                let t = n as f64 * dt;
                let cond = conditional_density(&geom, cursor.get(n)?);
                prev_slice.copy_from_slice(u.slice(n));
                {
                    let ctx = SliceContext::new(problem, &geom, t, &w);
                    update_control_slice(&ctx, &cond, &prev_slice, u.slice_mut(n));
                }
                change = change.max(max_diff(&prev_slice, u.slice(n)));
                let gen = build_generator(problem, &geom, t, u.slice(n))?;
                cost_slice(problem, &geom, t, u.slice(n), &mut cost);
                hjb_step_with(&gen, &cost, &w, dt, t, &mut next)?;
                std::mem::swap(&mut w, &mut next);
                store.offer(n, &w);
            }
            drop(cursor);
            let j = geom.inner(&w, &p0);
            result_value = Some(ValueField::new(problem.clone(), geom.clone(), Arc::new(u.clone()), store));
            (Sweep::Backward, j)
        } else {
            // Forward: u^{k}_t from p^{k}_t and w^{k-1}_{t+dt}; then p^{k}_{t+dt}.
            let value = result_value.as_ref().expect("a backward sweep precedes every forward sweep");
            let mut cursor = value.cursor();
            let mut store = SliceStore::new(steps, options.storage.stride(steps, geom.len));
            let mut p = p0.clone();
            let mut running = 0.0;
            store.offer(0, &p);
            for n in 0..steps {
                let t = n as f64 * dt;
                let cond = conditional_density(&geom, &p);
                prev_slice.copy_from_slice(u.slice(n));
                {
                    let w_next = cursor.get(n + 1)?;
                    let ctx = SliceContext::new(problem, &geom, t, w_next);
                    update_control_slice(&ctx, &cond, &prev_slice, u.slice_mut(n));
                }
                change = change.max(max_diff(&prev_slice, u.slice(n)));
                let gen = build_generator(problem, &geom, t, u.slice(n))?;
                cost_slice(problem, &geom, t, u.slice(n), &mut cost);
                running += geom.inner(&cost, &p) * dt;
                let report = fp_step_into(&geom, &p, &gen, dt, t, &mut next, &mut scratch)?;
                mass_log.record(&report);
                std::mem::swap(&mut p, &mut next);
                store.offer(n + 1, &p);
            }
            drop(cursor);
            let j = running + geom.inner(&g, &p);
            density = DensityField::new(problem.clone(), geom.clone(), Arc::new(u.clone()), store);
            (Sweep::Forward, j)
        };
        if !objective.is_finite() {
            return Err(GridError::NonFinite { what: "objective", t: 0.0 });
        }
        let j_prev = iterations[k - 1].objective;
        iterations.push(GridIterationRecord { k, sweep, objective, control_change: change });
        debug!("fbsm-grid k={k} {sweep:?} J={objective} max|du|={change}");
        if objective > j_prev + options.monotonicity_slack * (1.0 + j_prev.abs()) {
            warn!("objective increased at iteration {k}: {j_prev} -> {objective}");
            warnings.push(k);
        }
        if k == 1 {
            first_iterate = Some(u.clone());
        }
        if options.keep_controls {
            controls.push(u.clone());
        }
        converged = k >= 2 && (objective - j_prev).abs() <= options.tol * (1.0 + objective.abs());
        if converged && options.stop_early {
            break;
        }
    }
    info!(
        "fbsm-grid finished after {} iterations, J={}, converged={converged}",
        iterations.len() - 1,
        iterations.last().unwrap().objective
    );
    Ok(FbsmGridResult {
        control: u,
        density,
        value: result_value,
        iterations,
        converged,
        mass_log,
        monotonicity_warnings: warnings,
        first_iterate,
        controls,
    })
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}
