//! Run directories: the effective config, the manifest, and file helpers.

use std::path::{Path, PathBuf};

use fbsm_core::config::Config;
use fbsm_core::io::{read_json, write_json, Manifest};
use sha2::{Digest, Sha256};

use crate::{Common, Failure};

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Loads the config named by `--config` and applies the command-line overrides.
pub fn load_config(common: &Common, fallback: Option<&Path>) -> Result<Config, Failure> {
    let path = match (&common.config, fallback) {
        (Some(p), _) => p.clone(),
        (None, Some(dir)) => dir.join(CONFIG_FILE),
        (None, None) => return Err(Failure::input("--config is required")),
    };
    let mut config = Config::load(&path)?;
    config.apply(&common.overrides())?;
    Ok(config)
}

pub fn config_hash(config: &Config) -> String {
    let text = serde_json::to_string(config).expect("configs serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))
}

/// Collects artifact names as they are written, then records them in the
/// manifest.
pub struct RunDir {
    pub dir: PathBuf,
    artifacts: Vec<String>,
}

impl RunDir {
    pub fn create(dir: &Path) -> Result<Self, Failure> {
        create_dir(dir)?;
        Ok(Self { dir: dir.to_path_buf(), artifacts: Vec::new() })
    }

    /// Path for a new artifact, recorded for the manifest.
    pub fn file(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.dir.join(name)
    }

    pub fn write_config(&mut self, config: &Config) -> Result<(), Failure> {
        let path = self.file(CONFIG_FILE);
        write_json(&path, config)?;
        Ok(())
    }

    pub fn finish(mut self, command: &str, config: &Config, seed: Option<u64>) -> Result<(), Failure> {
        let path = self.dir.join(MANIFEST_FILE);
        self.artifacts.sort();
        self.artifacts.dedup();
        let manifest = Manifest {
            command: command.to_string(),
            config_hash: config_hash(config),
            solver_version: VERSION.to_string(),
            seed,
            artifacts: self.artifacts,
        };
        write_json(&path, &manifest)?;
        Ok(())
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, Failure> {
    Ok(read_json(&dir.join(MANIFEST_FILE))?)
}

/// Formats a time for file names: `0.45` becomes `t0.45`.
pub fn time_tag(t: f64) -> String {
    format!("t{}", fbsm_core::io::fmt_f64(t))
}
