//! `run-lqg` and `run-grid`.

use std::path::Path;
use std::time::Instant;

use fbsm_core::config::{Config, LqgConfig, ObstacleConfig};
use fbsm_core::grid::{fbsm_grid, solve_fp, solve_hjb, ControlField, Geometry, MassLog, Storage};
use fbsm_core::io::{write_gains, write_json, Table};
use fbsm_core::linalg::min_eigenvalue;
use fbsm_core::lqg::fbsm_lqg;
use fbsm_core::verify::monotonicity_check;
use serde::{Deserialize, Serialize};

use crate::artifacts::{load_config, time_tag, RunDir};
use crate::{Common, Failure, Status};

pub const GAINS_FILE: &str = "gains.csv";
pub const INITIAL_GAINS_FILE: &str = "gains_initial.csv";
pub const CONTROL_FILE: &str = "control.json";
pub const ITERATIONS_FILE: &str = "iterations.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Objective increases tolerated before a run is reported non-monotone.
pub const LQG_SLACK: f64 = 1e-8;
pub const GRID_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LqgSummary {
    pub family: String,
    pub iterations: usize,
    pub converged: bool,
    pub initial_objective: f64,
    pub final_objective: f64,
    /// `|J^K − J^{K−1}|`.
    pub last_change: f64,
    pub monotone: bool,
    pub worst_increase: f64,
    /// Smallest eigenvalue of `Λ` over all times of the final iterate.
    pub min_lambda_eigenvalue: f64,
    pub wall_seconds: f64,
    pub status: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSummary {
    pub family: String,
    pub iterations: usize,
    pub converged: bool,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub last_change: f64,
    pub monotone: bool,
    pub worst_increase: f64,
    pub monotonicity_warnings: Vec<usize>,
    pub mass: MassLog,
    pub max_abs_control: f64,
    pub export_times: Vec<f64>,
    pub wall_seconds: f64,
    pub status: u8,
}

fn wrong_family(command: &str, config: &Config) -> Failure {
    Failure::input(format!("{command} cannot run a \"{}\" config", config.family()))
}

fn status_of(converged: bool) -> Status {
    if converged {
        Status::Ok
    } else {
        Status::MaxIters
    }
}

fn last_change(j: &[f64]) -> f64 {
    match j {
        [.., a, b] => (b - a).abs(),
        _ => 0.0,
    }
}

pub fn run_lqg(common: &Common, command: &str) -> Result<Status, Failure> {
    let config = load_config(common, None)?;
    let Config::Lqg(c) = &config else { return Err(wrong_family(command, &config)) };
    run_lqg_config(&config, c, &common.out()?, command)
}

pub fn run_lqg_config(config: &Config, c: &LqgConfig, out: &Path, command: &str) -> Result<Status, Failure> {
    let problem = c.problem()?;
    let mut dir = RunDir::create(out)?;
    dir.write_config(config)?;
    let start = Instant::now();
    let res = fbsm_lqg(&problem, &c.options())?;
    let wall = start.elapsed().as_secs_f64();

    write_gains(&dir.file(GAINS_FILE), &res.final_gains())?;
    write_gains(&dir.file(INITIAL_GAINS_FILE), &res.gains(0))?;
    let mut table = Table::new(&["k", "objective"]);
    for r in &res.iterations {
        table.push(vec![r.k as f64, r.objective]);
    }
    table.write(&dir.file(ITERATIONS_FILE))?;

    let j = res.objectives();
    let mono = monotonicity_check(&j, LQG_SLACK)?;
    let lambda = &res.iterates.last().expect("initial iterate").lambda;
    let status = status_of(res.converged);
    let summary = LqgSummary {
        family: config.family().into(),
        iterations: j.len() - 1,
        converged: res.converged,
        initial_objective: j[0],
        final_objective: res.final_objective(),
        last_change: last_change(&j),
        monotone: mono.passed,
        worst_increase: mono.worst_increase,
        min_lambda_eigenvalue: lambda.iter().map(min_eigenvalue).fold(f64::INFINITY, f64::min),
        wall_seconds: wall,
        status: status as u8,
    };
    write_json(&dir.file(SUMMARY_FILE), &summary)?;
    dir.finish(command, config, None)?;
    Ok(status)
}

pub fn run_grid(common: &Common, command: &str) -> Result<Status, Failure> {
    let config = load_config(common, None)?;
    let Config::ObstacleGrid(c) = &config else { return Err(wrong_family(command, &config)) };
    run_grid_config(&config, c, &common.out()?, command)
}

pub fn run_grid_config(config: &Config, c: &ObstacleConfig, out: &Path, command: &str) -> Result<Status, Failure> {
    let problem = c.problem.grid_problem()?;
    let geom = problem.validate()?;
    if let Some(t) = c.export_times.iter().find(|t| !(0.0..=c.problem.horizon).contains(*t)) {
        return Err(Failure::input(format!("export time {t} outside [0, {}]", c.problem.horizon)));
    }
    let mut dir = RunDir::create(out)?;
    dir.write_config(config)?;
    let start = Instant::now();
    let res = fbsm_grid(&problem, &ControlField::zeros(&problem), &c.options())?;
    let wall = start.elapsed().as_secs_f64();

    write_json(&dir.file(CONTROL_FILE), &res.control)?;
    let mut table = Table::new(&["k", "objective", "control_change"]);
    for r in &res.iterations {
        table.push(vec![r.k as f64, r.objective, r.control_change]);
    }
    table.write(&dir.file(ITERATIONS_FILE))?;
    export_slices(&mut dir, &problem, &geom, &res.control, &c.export_times)?;

    let j = res.objectives();
    let mono = monotonicity_check(&j, GRID_SLACK)?;
    let status = status_of(res.converged);
    let summary = GridSummary {
        family: config.family().into(),
        iterations: j.len() - 1,
        converged: res.converged,
        initial_objective: j[0],
        final_objective: res.final_objective(),
        last_change: last_change(&j),
        monotone: mono.passed,
        worst_increase: mono.worst_increase,
        monotonicity_warnings: res.monotonicity_warnings.clone(),
        mass: res.mass_log,
        max_abs_control: res.control.max_abs(),
        export_times: c.export_times.clone(),
        wall_seconds: wall,
        status: status as u8,
    };
    write_json(&dir.file(SUMMARY_FILE), &summary)?;
    dir.finish(command, config, None)?;
    Ok(status)
}

/// Density, value and control slices under the final control.
fn export_slices(
    dir: &mut RunDir,
    problem: &fbsm_core::grid::GridProblem,
    geom: &Geometry,
    control: &ControlField,
    times: &[f64],
) -> Result<(), Failure> {
    let density = solve_fp(problem, control, Storage::Auto)?;
    let value = solve_hjb(problem, control, Storage::Auto)?;
    let steps = problem.grid.time_steps;
    let dx = geom.state_dim;
    let coord_names: Vec<String> =
        (0..dx).map(|i| format!("x{i}")).chain((0..geom.memory_dim).map(|i| format!("z{i}"))).collect();
    let z_names: Vec<String> = (0..geom.memory_dim).map(|i| format!("z{i}")).collect();
    let u_names: Vec<String> = (0..problem.control_dim()).map(|j| format!("u{j}")).collect();
    for &t in times {
        let n = Geometry::time_index(t, problem.dt(), steps);
        let tag = time_tag(t);
        for (name, values) in [("density", density.slice(n)?), ("value", value.slice(n)?)] {
            let header: Vec<&str> = coord_names.iter().map(String::as_str).chain([name]).collect();
            let mut table = Table::new(&header);
            for (idx, v) in values.iter().enumerate() {
                let mut row = geom.coord_slice(idx).to_vec();
                row.push(*v);
                table.push(row);
            }
            table.write(&dir.file(&format!("{name}_{tag}.csv")))?;
        }
        let header: Vec<&str> = z_names.iter().chain(&u_names).map(String::as_str).collect();
        let mut table = Table::new(&header);
        let nc = n.min(steps - 1);
        for zi in 0..geom.nz {
            let mut row = geom.memory_coords(zi).to_vec();
            row.extend_from_slice(control.at(nc, zi));
            table.push(row);
        }
        table.write(&dir.file(&format!("control_{tag}.csv")))?;
    }
    Ok(())
}
