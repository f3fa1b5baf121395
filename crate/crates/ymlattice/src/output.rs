//! Output directory: CSV tables, JSON documents and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::AppError;

/// Version of the CSV column sets and JSON layouts.
pub const SCHEMA_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESULTS_FILE: &str = "results.csv";

/// Everything needed to reproduce a run's tables. Deliberately free of
/// timestamps and host names so reruns are byte-identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    /// Random streams used, one per chain.
    pub streams: Vec<u64>,
    pub version: String,
    pub files: Vec<String>,
    pub config: String,
}

impl Manifest {
    pub fn new(cfg: &RunConfig, streams: Vec<u64>, files: Vec<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            experiment: cfg.experiment.name.as_str().to_string(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            threads: cfg.threads,
            streams,
            version: env!("CARGO_PKG_VERSION").to_string(),
            files,
            config: cfg.canonical_toml(),
        }
    }
}

/// A run's output directory; every write goes through here.
#[derive(Clone, Debug)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, AppError> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Path of a file inside the directory; names may not escape it.
    pub fn path(&self, name: &str) -> Result<PathBuf, AppError> {
        let p = Path::new(name);
        if p.is_absolute() || p.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
            return Err(AppError::Output(format!(
                "refusing to write outside the output directory: {name}"
            )));
        }
        Ok(self.root.join(p))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), AppError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.path(name)?, text)?;
        Ok(())
    }

    pub fn write_csv<R: Serialize>(&self, name: &str, rows: &[R]) -> Result<(), AppError> {
        let mut w = csv::Writer::from_path(self.path(name)?)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<(), AppError> {
        fs::write(self.path(name)?, bytes)?;
        Ok(())
    }

    pub fn write_manifest(&self, manifest: &Manifest) -> Result<(), AppError> {
        self.write_json(MANIFEST_FILE, manifest)
    }
}
