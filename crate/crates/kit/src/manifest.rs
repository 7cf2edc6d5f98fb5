//! Run manifests: everything needed to re-execute a run.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use bilbo_core::data::SyntheticSpec;
use bilbo_core::model::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{KitError, KitResult};
use crate::io::{read_file, write_file};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA: u32 = 1;
/// Bumped whenever a CSV header changes.
pub const CSV_SCHEMA: u32 = 1;

pub fn tool_version() -> &'static str {
    env!("BILBO_KIT_VERSION")
}

pub fn now_unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    Mnist {
        images: PathBuf,
        labels: Option<PathBuf>,
        limit: Option<usize>,
    },
    Synthetic {
        spec: SyntheticSpec,
    },
}

/// One training run: data, scale and hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataSource,
    pub lambda: f64,
    pub train: TrainConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Tau,
    Lambda,
    Sigma,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Tau => "tau",
            Self::Lambda => "lambda",
            Self::Sigma => "sigma",
        }
    }

    pub fn default_grid(self) -> Vec<f64> {
        match self {
            Self::Tau => vec![0.1, 0.2, 0.5, 1.0, 5.0],
            Self::Lambda => vec![0.5, 1.0, 10.0, 100.0],
            Self::Sigma => vec![0.1, 0.3, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub base: RunConfig,
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
    /// Derive a distinct seed per grid point instead of reusing the base seed.
    pub independent_seeds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterConfig {
    pub run: PathBuf,
    pub data: DataSource,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub run: PathBuf,
    pub count: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", content = "config", rename_all = "kebab-case")]
pub enum CommandConfig {
    Train(RunConfig),
    Sweep(SweepConfig),
    ExportScatter(ScatterConfig),
    SampleDump(SampleConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub csv_schema: u32,
    pub tool_version: String,
    #[serde(flatten)]
    pub config: CommandConfig,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub out_dir: PathBuf,
    /// Files written by this run, relative to `out_dir`.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(config: CommandConfig, out_dir: &Path, started_unix_ms: u64, outputs: Vec<String>) -> Self {
        Self {
            schema: MANIFEST_SCHEMA,
            csv_schema: CSV_SCHEMA,
            tool_version: tool_version().to_string(),
            config,
            started_unix_ms,
            finished_unix_ms: now_unix_ms(),
            out_dir: out_dir.to_path_buf(),
            outputs,
        }
    }

    pub fn write(&self, dir: &Path) -> KitResult<()> {
        let json = serde_json::to_vec_pretty(self)?;
        write_file(&dir.join(MANIFEST_FILE), &json)
    }

    /// Reads `path`, or `path/manifest.json` when `path` is a directory.
    pub fn read(path: &Path) -> KitResult<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let m: Self = serde_json::from_slice(&read_file(&file)?)?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(KitError::Format {
                path: file,
                message: format!("manifest schema {} is not supported", m.schema),
            });
        }
        Ok(m)
    }
}
