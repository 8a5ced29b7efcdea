//! Declarative problem configs for the two built-in families.
//!
//! A config is one JSON document whose `"family"` field selects either a
//! linear-quadratic problem (`"lqg"`) or the obstacle problem
//! (`"obstacle-grid"`). Matrices are nested row-major arrays.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{FbsmGridOptions, Storage};
use crate::lqg::{FbsmLqgOptions, Scheme};
use crate::problem::LqgProblem;
use crate::problems::ObstacleParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub stop_early: bool,
    /// Only used by the LQG family.
    pub scheme: Scheme,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { max_iters: 50, tol: 1e-6, stop_early: false, scheme: Scheme::Rk4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub paths: usize,
    pub seed: u64,
    /// Defaults to the solver time step.
    pub dt: Option<f64>,
    /// Keep every n-th state in `paths.csv`.
    pub record_stride: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { paths: 100, seed: 0, dt: None, record_stride: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqgConfig {
    pub state_dim: usize,
    pub memory_dim: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub mu0: Vec<f64>,
    pub lambda0: Vec<Vec<f64>>,
    pub horizon: f64,
    pub dt: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
}

pub const DEFAULT_EXPORT_TIMES: [f64; 5] = [0.0, 0.25, 0.45, 0.75, 1.0];

fn default_export_times() -> Vec<f64> {
    DEFAULT_EXPORT_TIMES.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleConfig {
    #[serde(default)]
    pub problem: ObstacleParams,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    /// Times at which density, value and control slices are exported.
    #[serde(default = "default_export_times")]
    pub export_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Config {
    Lqg(LqgConfig),
    ObstacleGrid(ObstacleConfig),
}

/// Command-line overrides applied on top of a config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dt: Option<f64>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
}

fn matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>, ConfigError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(ConfigError::Invalid(format!("{name} has rows of different lengths")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ConfigError::Invalid(format!("{name} has non-finite entries")));
    }
    Ok(DMatrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn family(&self) -> &'static str {
        match self {
            Config::Lqg(_) => "lqg",
            Config::ObstacleGrid(_) => "obstacle-grid",
        }
    }

    pub fn solver(&self) -> &SolverConfig {
        match self {
            Config::Lqg(c) => &c.solver,
            Config::ObstacleGrid(c) => &c.solver,
        }
    }

    pub fn simulation(&self) -> &SimulationConfig {
        match self {
            Config::Lqg(c) => &c.simulation,
            Config::ObstacleGrid(c) => &c.simulation,
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), ConfigError> {
        let (solver, sim) = match self {
            Config::Lqg(c) => {
                if let Some(dt) = o.dt {
                    c.dt = dt;
                }
                (&mut c.solver, &mut c.simulation)
            }
            Config::ObstacleGrid(c) => {
                if let Some(dt) = o.dt {
                    if !(dt > 0.0) {
                        return Err(ConfigError::Invalid("dt must be positive".into()));
                    }
                    let steps = c.problem.horizon / dt;
                    if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
                        return Err(ConfigError::Invalid(format!(
                            "dt = {dt} does not divide the horizon {}",
                            c.problem.horizon
                        )));
                    }
                    c.problem.time_steps = steps.round() as usize;
                }
                (&mut c.solver, &mut c.simulation)
            }
        };
        if let Some(k) = o.max_iters {
            solver.max_iters = k;
        }
        if let Some(t) = o.tol {
            solver.tol = t;
        }
        if let Some(s) = o.seed {
            sim.seed = s;
        }
        if let Some(n) = o.paths {
            sim.paths = n;
        }
        Ok(())
    }
}

impl LqgConfig {
    pub fn problem(&self) -> Result<LqgProblem, ConfigError> {
        Ok(LqgProblem {
            a: matrix(&self.a, "a")?.into(),
            b: matrix(&self.b, "b")?.into(),
            sigma: matrix(&self.sigma, "sigma")?.into(),
            q: matrix(&self.q, "q")?.into(),
            r: matrix(&self.r, "r")?.into(),
            p: matrix(&self.p, "p")?,
            mu0: DVector::from_vec(self.mu0.clone()),
            lambda0: matrix(&self.lambda0, "lambda0")?,
            horizon: self.horizon,
            dt: self.dt,
            state_dim: self.state_dim,
            memory_dim: self.memory_dim,
        })
    }

    pub fn options(&self) -> FbsmLqgOptions {
        FbsmLqgOptions {
            max_iters: self.solver.max_iters,
            tol: self.solver.tol,
            scheme: self.solver.scheme,
            stop_early: self.solver.stop_early,
            ..FbsmLqgOptions::default()
        }
    }
}

impl ObstacleConfig {
    pub fn options(&self) -> FbsmGridOptions {
        FbsmGridOptions {
            max_iters: self.solver.max_iters,
            tol: self.solver.tol,
            stop_early: self.solver.stop_early,
            storage: Storage::Auto,
            ..FbsmGridOptions::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::validate_lqg;

    const LQG: &str = r#"{
        "family": "lqg", "state_dim": 1, "memory_dim": 1,
        "a": [[1, 0], [1, 0]], "b": [[1, 0], [0, 1]], "sigma": [[1, 0], [0, 1]],
        "q": [[1, 0], [0, 0]], "r": [[1, 0], [0, 1]], "p": [[0, 0], [0, 0]],
        "mu0": [0, 0], "lambda0": [[1, 0], [0, 1]], "horizon": 10, "dt": 0.01
    }"#;

    #[test]
    fn parses_lqg_family() {
        let cfg = Config::from_json(LQG).unwrap();
        assert_eq!(cfg.family(), "lqg");
        let Config::Lqg(c) = &cfg else { panic!() };
        let p = c.problem().unwrap();
        assert!(validate_lqg(&p).is_ok());
        assert_eq!(p.a.at(0.0), crate::problems::bundled_lqg().a.at(0.0));
        assert_eq!(c.solver, SolverConfig::default());
    }

    #[test]
    fn parses_obstacle_family_with_defaults() {
        let cfg = Config::from_json(r#"{"family": "obstacle-grid", "problem": {"time_steps": 1000}}"#).unwrap();
        let Config::ObstacleGrid(c) = &cfg else { panic!() };
        assert_eq!(c.problem.time_steps, 1000);
        assert_eq!(c.problem.height, 1000.0);
        assert_eq!(c.export_times, DEFAULT_EXPORT_TIMES.to_vec());
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(Config::from_json(r#"{"family": "other"}"#).is_err());
        assert!(Config::from_json(r#"{"family": "obstacle-grid", "typo": 1}"#).is_err());
        let ragged = LQG.replace("[[1, 0], [1, 0]]", "[[1, 0], [1]]");
        let Config::Lqg(c) = Config::from_json(&ragged).unwrap() else { panic!() };
        assert!(matches!(c.problem(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn overrides() {
        let mut cfg = Config::from_json(r#"{"family": "obstacle-grid"}"#).unwrap();
        cfg.apply(&Overrides { dt: Some(0.002), max_iters: Some(3), seed: Some(7), ..Default::default() })
            .unwrap();
        let Config::ObstacleGrid(c) = &cfg else { panic!() };
        assert_eq!(c.problem.time_steps, 500);
        assert_eq!(c.solver.max_iters, 3);
        assert_eq!(c.simulation.seed, 7);
        assert!(cfg.apply(&Overrides { dt: Some(0.3), ..Default::default() }).is_err());
    }
}
