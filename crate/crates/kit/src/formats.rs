//! CSV outputs. Header rows are fixed by the serialized field names.

use std::path::Path;

use bilbo_core::model::MetricsRow;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{KitError, KitResult};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SCATTER_FILE: &str = "scatter.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const CHECKPOINT_FILE: &str = "model.bvae";
pub const SAMPLES_FILE: &str = "samples.f64";

pub const METRICS_HEADER: &str = "step,objective,kl_term,loglik_term,trS2,baggins_t_median";
pub const SCATTER_HEADER: &str = "mu_1,mu_2,sigma2_1,sigma2_2,label";
pub const SWEEP_HEADER: &str =
    "axis,value,seed,final_objective,eval_bound,recon_rmse,normalized_recon_error,baggins_t_median,clip_events";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub mu_1: f64,
    pub mu_2: f64,
    pub sigma2_1: f64,
    pub sigma2_2: f64,
    pub label: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub seed: u64,
    /// Last logged training objective.
    pub final_objective: f64,
    /// Per-example bound over the training data.
    pub eval_bound: f64,
    pub recon_rmse: f64,
    /// `recon_rmse / λ`.
    pub normalized_recon_error: f64,
    pub baggins_t_median: f64,
    pub clip_events: usize,
}

/// Writes `header` then one record per row; the row type's field order
/// must match `header`.
pub fn write_csv<T: Serialize>(path: &Path, header: &str, rows: &[T]) -> KitResult<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    w.write_record(header.split(',')).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| KitError::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> KitResult<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

fn csv_err(path: &Path, e: csv::Error) -> KitError {
    KitError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> KitResult<()> {
    write_csv(path, METRICS_HEADER, rows)
}

pub fn read_metrics(path: &Path) -> KitResult<Vec<MetricsRow>> {
    read_csv(path)
}
