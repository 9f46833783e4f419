use std::path::{Path, PathBuf};

use resprop::{Error, Result};
use serde::Serialize;
use serde_json::Value;

pub const METRICS_FILE: &str = "metrics.json";
pub const CURVES_FILE: &str = "curves.csv";
pub const THETA_FILE: &str = "theta.bin";

/// Everything needed to rerun a command: what ran, with which resolved
/// settings, and what it produced.
#[derive(Debug, Serialize)]
pub struct Record<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub config: Value,
    pub results: Value,
}

pub struct OutputDir {
    dir: PathBuf,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_record(&self, command: &str, config: Value, results: Value) -> Result<PathBuf> {
        let record = Record {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config,
            results,
        };
        let path = self.path(METRICS_FILE);
        let text = serde_json::to_string_pretty(&record).expect("records serialize");
        std::fs::write(&path, text + "\n").map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }
}
