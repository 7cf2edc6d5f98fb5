use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::stats;

/// Distribution summary of one checked quantity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub median: f64,
    pub p90: f64,
    pub n: usize,
    /// Count of flagged (excluded) evaluations.
    pub flags: usize,
}

impl MetricSummary {
    pub fn from_values(values: &[f64], flags: usize) -> Self {
        Self {
            median: stats::median(values),
            p90: stats::quantile(values, 0.9),
            n: values.len(),
            flags,
        }
    }
}

/// Metric name to summary; serializes as a JSON object.
pub type Report = BTreeMap<String, MetricSummary>;
