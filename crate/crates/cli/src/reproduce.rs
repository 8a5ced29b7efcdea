//! `reproduce`: both bundled problems end to end.

use std::path::Path;

use fbsm_core::config::Config;
use fbsm_core::io::write_json;
use serde::Serialize;

use crate::artifacts::create_dir;
use crate::run::{run_grid_config, run_lqg_config, INITIAL_GAINS_FILE};
use crate::simulate::simulate_config;
use crate::verify::{check, VerifyReport, VERIFY_FILE};
use crate::{Common, Failure, Status};

pub const LQG_CONFIG: &str = include_str!("../../core/configs/lqg.json");
pub const OBSTACLE_CONFIG: &str = include_str!("../../core/configs/obstacle.json");

#[derive(Serialize)]
struct Step {
    name: String,
    status: u8,
    message: Option<String>,
}

#[derive(Serialize)]
struct Report {
    steps: Vec<Step>,
    verified: Vec<VerifyReport>,
    passed: bool,
}

fn record(steps: &mut Vec<Step>, name: &str, r: Result<Status, Failure>) -> Status {
    let (status, message) = match r {
        Ok(s) => (s, None),
        Err(f) => (f.status, Some(f.message)),
    };
    println!("{name}: exit {}", status as u8);
    steps.push(Step { name: name.into(), status: status as u8, message });
    status
}

fn bundled(text: &str, common: &Common) -> Result<Config, Failure> {
    let mut config = Config::from_json(text)?;
    config.apply(&common.overrides())?;
    Ok(config)
}

pub fn reproduce(common: &Common) -> Result<Status, Failure> {
    let out = common.out()?;
    if common.config.is_some() {
        return Err(Failure::input("reproduce runs the bundled configs; --config is not accepted"));
    }
    create_dir(&out)?;
    let mut steps = Vec::new();
    let mut verified = Vec::new();
    let mut worst = Status::Ok;
    for (name, text) in [("lqg", LQG_CONFIG), ("obstacle", OBSTACLE_CONFIG)] {
        let config = bundled(text, common)?;
        let dir = out.join(name);
        let run = match &config {
            Config::Lqg(c) => run_lqg_config(&config, c, &dir, "reproduce"),
            Config::ObstacleGrid(c) => run_grid_config(&config, c, &dir, "reproduce"),
        };
        let status = record(&mut steps, &format!("{name}/run"), run);
        worst = worst.max(status);
        if matches!(status, Status::Input | Status::Numerical) {
            continue;
        }
        let initial = match config {
            Config::Lqg(_) => dir.join(INITIAL_GAINS_FILE).display().to_string(),
            Config::ObstacleGrid(_) => "zero".to_string(),
        };
        let final_dir = dir.display().to_string();
        for (label, controller) in [("initial", initial.as_str()), ("final", final_dir.as_str())] {
            let sim = simulate_config(&config, controller, &dir.join(format!("simulate_{label}")), "reproduce");
            worst = worst.max(record(&mut steps, &format!("{name}/simulate_{label}"), sim));
        }
        match verify_into(&dir) {
            Ok(report) => {
                let status = if report.passed { Status::Ok } else { Status::Failed };
                worst = worst.max(record(&mut steps, &format!("{name}/verify"), Ok(status)));
                verified.push(report);
            }
            Err(f) => worst = worst.max(record(&mut steps, &format!("{name}/verify"), Err(f))),
        }
    }
    let passed = worst == Status::Ok;
    write_json(&out.join("reproduce.json"), &Report { steps, verified, passed })?;
    Ok(worst)
}

fn verify_into(dir: &Path) -> Result<VerifyReport, Failure> {
    let report = check(dir)?;
    write_json(&dir.join(VERIFY_FILE), &report)?;
    Ok(report)
}
