//! `verify`: re-checks a run directory against the oracles that apply to
//! its family.

use std::path::Path;

use fbsm_core::config::Config;
use fbsm_core::grid::{ControlField, Storage};
use fbsm_core::io::{read_gains, read_json, write_json, Table};
use fbsm_core::linalg::min_eigenvalue;
use fbsm_core::lqg::lqg_objective;
use fbsm_core::verify::{hash_inputs, monotonicity_check, pmp_residual, OracleReport, Violation};
use serde::{Deserialize, Serialize};

use crate::artifacts::{config_hash, read_manifest, CONFIG_FILE};
use crate::run::{GridSummary, CONTROL_FILE, GAINS_FILE, GRID_SLACK, ITERATIONS_FILE, LQG_SLACK, SUMMARY_FILE};
use crate::{Failure, Status};

pub const VERIFY_FILE: &str = "verify.json";

/// Weighted PMP residual allowed relative to `1 + |J|`.
pub const PMP_RELATIVE_TOL: f64 = 1e-4;
/// Relative agreement between the recorded final objective and a recomputation.
pub const OBJECTIVE_RELATIVE_TOL: f64 = 1e-9;
pub const MASS_TOL: f64 = 1e-12;
pub const NEGATIVE_MASS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub run: String,
    pub family: String,
    pub passed: bool,
    pub oracles: Vec<OracleReport>,
    pub violations: Vec<Violation>,
}

fn require(dir: &Path, name: &str) -> Result<std::path::PathBuf, Failure> {
    let p = dir.join(name);
    if p.is_file() {
        Ok(p)
    } else {
        Err(Failure::input(format!("{}: missing artifact {name}", dir.display())))
    }
}

fn objectives(dir: &Path) -> Result<Vec<f64>, Failure> {
    let table = Table::read(&require(dir, ITERATIONS_FILE)?)?;
    table
        .column("objective")
        .ok_or_else(|| Failure::input(format!("{ITERATIONS_FILE} has no objective column")))
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

pub fn check(dir: &Path) -> Result<VerifyReport, Failure> {
    let config = Config::load(&require(dir, CONFIG_FILE)?)?;
    let j = objectives(dir)?;
    let last = *j.last().ok_or_else(|| Failure::input(format!("{ITERATIONS_FILE} is empty")))?;
    let mut oracles = Vec::new();
    let slack = match config {
        Config::Lqg(_) => LQG_SLACK,
        Config::ObstacleGrid(_) => GRID_SLACK,
    };
    let mono = monotonicity_check(&j, slack)?;
    oracles.push(mono.oracle(&j));
    let manifest = read_manifest(dir)?;
    let hash = config_hash(&config);
    let mut integrity = OracleReport::new("manifest_config_hash", hash.clone(), &[], 0.0, 0.0);
    integrity.passed = manifest.config_hash == hash;
    oracles.push(integrity);

    match &config {
        Config::Lqg(c) => {
            let problem = c.problem()?;
            let gains = read_gains(&require(dir, GAINS_FILE)?)?;
            let min_eig = gains.lambda.iter().map(min_eigenvalue).fold(f64::INFINITY, f64::min);
            let flat: Vec<f64> = gains.lambda.iter().flat_map(|m| m.iter().copied()).collect();
            let mut pd = OracleReport::new("lambda_positive_definite", hash_inputs([flat.as_slice()]), &[("min_eigenvalue", min_eig)], -min_eig, 0.0);
            pd.passed = min_eig > 0.0;
            oracles.push(pd);
            let recomputed = lqg_objective(&problem, &gains)?;
            let gap = relative_gap(recomputed, last);
            oracles.push(OracleReport::new(
                "objective_consistency",
                hash_inputs([&j[..]]),
                &[("recorded", last), ("recomputed", recomputed), ("relative_gap", gap)],
                gap,
                OBJECTIVE_RELATIVE_TOL,
            ));
        }
        Config::ObstacleGrid(c) => {
            let problem = c.problem.grid_problem()?;
            let control: ControlField = read_json(&require(dir, CONTROL_FILE)?)?;
            if !control.matches(&problem) {
                return Err(Failure::input(format!("{CONTROL_FILE} does not match the config's grid")));
            }
            let summary: GridSummary = read_json(&require(dir, SUMMARY_FILE)?)?;
            let mut mass = OracleReport::new(
                "mass_conservation",
                hash_inputs([&j[..]]),
                &[("max_mass_error", summary.mass.max_mass_error), ("max_negative_mass", summary.mass.max_negative_mass)],
                summary.mass.max_mass_error,
                MASS_TOL,
            );
            mass.passed &= summary.mass.max_negative_mass <= NEGATIVE_MASS_TOL;
            oracles.push(mass);
            let pmp = pmp_residual(&problem, &control, Storage::Auto)?;
            oracles.push(pmp.oracle(&control, PMP_RELATIVE_TOL * (1.0 + last.abs())));
            let gap = relative_gap(pmp.objective, last);
            oracles.push(OracleReport::new(
                "objective_consistency",
                hash_inputs([&j[..]]),
                &[("recorded", last), ("recomputed", pmp.objective), ("relative_gap", gap)],
                gap,
                OBJECTIVE_RELATIVE_TOL,
            ));
        }
    }
    Ok(VerifyReport {
        run: dir.display().to_string(),
        family: config.family().into(),
        passed: oracles.iter().all(|o| o.passed),
        oracles,
        violations: mono.violations,
    })
}

pub fn verify(dir: &Path, out: Option<&Path>) -> Result<Status, Failure> {
    if !dir.is_dir() {
        return Err(Failure::input(format!("{}: not a run directory", dir.display())));
    }
    let report = check(dir)?;
    let target = out.unwrap_or(dir);
    crate::artifacts::create_dir(target)?;
    write_json(&target.join(VERIFY_FILE), &report)?;
    for o in &report.oracles {
        println!("{} {}", if o.passed { "PASS" } else { "FAIL" }, o.oracle);
    }
    for v in &report.violations {
        println!("objective increased at k={}: {} -> {}", v.k, v.previous, v.current);
    }
    Ok(if report.passed { Status::Ok } else { Status::Failed })
}
