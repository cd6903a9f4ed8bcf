use std::path::{Path, PathBuf};
use std::process::Command;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{Map, Value};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to rerun a command; written before any other output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config_paths: Vec<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
    pub version: String,
    /// Resolved settings, flags and files merged.
    pub settings: Map<String, Value>,
}

impl RunManifest {
    pub fn new(command: &str, config_paths: Vec<PathBuf>, seed: u64, out: &Path) -> Self {
        RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config_paths,
            seed,
            out: out.to_path_buf(),
            version: artifact_version(),
            settings: Map::new(),
        }
    }

    pub fn with<T: Serialize>(mut self, key: &str, value: T) -> Self {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.settings.insert(key.to_string(), v);
        self
    }

    pub fn write(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let path = self.out.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)?).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

/// `git describe` of the source tree when available, else the crate version.
fn artifact_version() -> String {
    let pkg = format!("v{}", env!("CARGO_PKG_VERSION"));
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| format!("{pkg}-{}", s.trim()))
        .unwrap_or(pkg)
}
