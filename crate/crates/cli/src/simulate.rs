//! `simulate`: closed-loop Monte Carlo under a stored controller.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use fbsm_core::config::Config;
use fbsm_core::grid::ControlField;
use fbsm_core::io::{read_gains, read_json, write_json, Table};
use fbsm_core::lqg::LqgControlLaw;
use fbsm_core::problems::{lqg_cost, lqg_dynamics};
use fbsm_core::sdesim::{estimate_objective, simulate_paths, Controller, Estimate, SimulationOptions, ZeroController};
use fbsm_core::{CostSpec, ExtendedDynamics};
use serde::{Deserialize, Serialize};

use crate::artifacts::{load_config, RunDir, CONFIG_FILE};
use crate::run::{CONTROL_FILE, GAINS_FILE};
use crate::{Common, Failure, Status};

pub const PATHS_FILE: &str = "paths.csv";
pub const OBJECTIVE_FILE: &str = "objective.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub controller: String,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub excluded: usize,
    pub seed: u64,
    pub dt: f64,
    /// Expected time spent inside the obstacle region (obstacle family only).
    pub occupancy: Option<Estimate>,
    /// Steps at which the memory left the control grid and was clamped.
    pub clamped_steps: usize,
}

enum Source {
    Zero,
    Gains(PathBuf),
    Field(PathBuf),
}

fn resolve(controller: &str) -> Result<(Source, Option<PathBuf>), Failure> {
    if controller == "zero" {
        return Ok((Source::Zero, None));
    }
    let path = PathBuf::from(controller);
    if path.is_dir() {
        let fallback = path.join(CONFIG_FILE).is_file().then(|| path.clone());
        if path.join(GAINS_FILE).is_file() {
            return Ok((Source::Gains(path.join(GAINS_FILE)), fallback));
        }
        if path.join(CONTROL_FILE).is_file() {
            return Ok((Source::Field(path.join(CONTROL_FILE)), fallback));
        }
        return Err(Failure::input(format!("{}: no {GAINS_FILE} or {CONTROL_FILE}", path.display())));
    }
    if !path.is_file() {
        return Err(Failure::input(format!("{controller}: no such controller artifact")));
    }
    let fallback = path.parent().filter(|d| d.join(CONFIG_FILE).is_file()).map(Path::to_path_buf);
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => Ok((Source::Gains(path), fallback)),
        Some("json") => Ok((Source::Field(path), fallback)),
        _ => Err(Failure::input(format!("{controller}: expected a .csv gain table or a .json control field"))),
    }
}

/// Everything needed to simulate one configured problem.
pub struct Setup {
    pub dynamics: ExtendedDynamics,
    pub cost: CostSpec,
    pub controller: Box<dyn Controller>,
    pub options: SimulationOptions,
}

pub fn setup(config: &Config, controller: &str) -> Result<Setup, Failure> {
    let (source, _) = resolve(controller)?;
    let sim = config.simulation();
    match config {
        Config::Lqg(c) => {
            let problem = c.problem()?;
            let controller: Box<dyn Controller> = match source {
                Source::Zero => Box::new(ZeroController(problem.control_dim())),
                Source::Gains(p) => {
                    let gains = read_gains(&p)?;
                    if (gains.horizon() - problem.horizon).abs() > 1e-9 * problem.horizon {
                        return Err(Failure::input(format!(
                            "{}: gains cover [0, {}], the config's horizon is {}",
                            p.display(),
                            gains.horizon(),
                            problem.horizon
                        )));
                    }
                    Box::new(LqgControlLaw::new(&problem, &gains)?)
                }
                Source::Field(p) => {
                    return Err(Failure::input(format!("{}: a grid control field cannot drive an LQG config", p.display())))
                }
            };
            let mut options = SimulationOptions::new(sim.paths, sim.seed, sim.dt.unwrap_or(problem.dt), problem.horizon);
            options.record_stride = sim.record_stride;
            Ok(Setup { dynamics: lqg_dynamics(&problem)?, cost: lqg_cost(&problem), controller, options })
        }
        Config::ObstacleGrid(c) => {
            let params = c.problem.clone();
            let problem = params.grid_problem()?;
            let controller: Box<dyn Controller> = match source {
                Source::Zero => Box::new(ZeroController(problem.control_dim())),
                Source::Field(p) => {
                    let field: ControlField = read_json(&p)?;
                    if field.control_dim != problem.control_dim() || (field.horizon - params.horizon).abs() > 1e-12 {
                        return Err(Failure::input(format!("{}: control field does not match the config", p.display())));
                    }
                    Box::new(field)
                }
                Source::Gains(p) => {
                    return Err(Failure::input(format!("{}: LQG gains cannot drive an obstacle-grid config", p.display())))
                }
            };
            let mut options = SimulationOptions::new(sim.paths, sim.seed, sim.dt.unwrap_or(problem.dt()), params.horizon);
            options.record_stride = sim.record_stride;
            let region = params.clone();
            options.region = Some(Arc::new(move |t, s: &[f64]| region.in_obstacle(t, s[0])));
            Ok(Setup { dynamics: params.dynamics()?, cost: params.cost(), controller, options })
        }
    }
}

pub fn simulate(common: &Common, controller: &str) -> Result<Status, Failure> {
    let (_, fallback) = resolve(controller)?;
    let config = load_config(common, fallback.as_deref())?;
    simulate_config(&config, controller, &common.out()?, "simulate")
}

pub fn simulate_config(config: &Config, controller: &str, out: &Path, command: &str) -> Result<Status, Failure> {
    let s = setup(config, controller)?;
    if s.options.n_paths == 0 {
        return Err(Failure::input("path count must be positive"));
    }
    let ens = simulate_paths(&s.dynamics, s.controller.as_ref(), &s.cost, &s.options)?;
    let mut dir = RunDir::create(out)?;
    dir.write_config(config)?;

    if ens.records() > 0 {
        let dx = s.dynamics.state_dim;
        let names: Vec<String> = ["path".to_string(), "t".to_string()]
            .into_iter()
            .chain((0..dx).map(|i| format!("x{i}")))
            .chain((0..s.dynamics.memory_dim).map(|i| format!("z{i}")))
            .chain(["cost".to_string()])
            .collect();
        let header: Vec<&str> = names.iter().map(String::as_str).collect();
        let mut table = Table::new(&header);
        for path in 0..ens.n_paths {
            for (r, t) in ens.times.iter().enumerate() {
                let mut row = vec![path as f64, *t];
                row.extend_from_slice(ens.state(path, r));
                row.push(ens.cumulative_cost[path * ens.records() + r]);
                table.push(row);
            }
        }
        table.write(&dir.file(PATHS_FILE))?;
    }

    let est = estimate_objective(&ens);
    let report = ObjectiveReport {
        controller: controller.to_string(),
        mean: est.mean,
        stderr: est.stderr,
        n: est.n,
        excluded: ens.excluded.len(),
        seed: ens.seed,
        dt: ens.dt,
        occupancy: s.options.region.as_ref().map(|_| ens.mean_occupancy()),
        clamped_steps: ens.clamp_counts.iter().sum(),
    };
    write_json(&dir.file(OBJECTIVE_FILE), &report)?;
    dir.finish(command, config, Some(ens.seed))?;
    if ens.excluded.len() == ens.n_paths {
        return Err(Failure::numerical("every simulated path diverged"));
    }
    Ok(Status::Ok)
}
