//! Datasets: the in-memory container, IDX byte parsing, synthetic
//! generators with known ground truth, and the probabilistic-PCA evidence.

mod idx;
mod ppca;
mod synthetic;

pub use idx::{dataset_from_idx, encode_idx_images, encode_idx_labels, parse_idx_images, parse_idx_labels, IdxImages};
pub use ppca::{ppca_log_evidence, ppca_log_evidence_with};
pub use synthetic::{gen_synthetic, SyntheticKind, SyntheticSpec};

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{contract, Result};
use crate::tensor::Tensor;

/// Generating parameters of a linear-Gaussian dataset:
/// `x = A u + noise`, `u ~ N(0, diag(variances))`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearTruth {
    /// `m x n_true`.
    pub a: DMatrix<f64>,
    pub variances: Vec<f64>,
    pub noise_std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    xs: Tensor,
    labels: Option<Vec<u32>>,
    scale_lambda: f64,
    meta: String,
    truth: Option<LinearTruth>,
}

impl Dataset {
    /// `xs` is `N x m` and must already include the scale `lambda`.
    pub fn new(xs: Tensor, labels: Option<Vec<u32>>, scale_lambda: f64, meta: impl Into<String>) -> Result<Self> {
        if xs.shape().len() != 2 || xs.rows() == 0 {
            return Err(contract("dataset needs at least one row"));
        }
        if !(scale_lambda > 0.0) || !scale_lambda.is_finite() {
            return Err(contract("lambda must be positive and finite"));
        }
        if !xs.all_finite() {
            return Err(contract("dataset contains non-finite values"));
        }
        if labels.as_ref().is_some_and(|l| l.len() != xs.rows()) {
            return Err(contract("label count differs from example count"));
        }
        Ok(Self {
            xs,
            labels,
            scale_lambda,
            meta: meta.into(),
            truth: None,
        })
    }

    pub fn with_truth(mut self, truth: LinearTruth) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn len(&self) -> usize {
        self.xs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.xs.cols()
    }

    pub fn xs(&self) -> &Tensor {
        &self.xs
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn scale_lambda(&self) -> f64 {
        self.scale_lambda
    }

    pub fn meta(&self) -> &str {
        &self.meta
    }

    pub fn truth(&self) -> Option<&LinearTruth> {
        self.truth.as_ref()
    }

    /// Multiplies every value (and the ground truth) by `lambda`.
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        let mut out = Self::new(
            self.xs.map(|v| v * lambda),
            self.labels.clone(),
            self.scale_lambda * lambda,
            self.meta.clone(),
        )?;
        out.truth = self.truth.as_ref().map(|t| LinearTruth {
            a: &t.a * lambda,
            variances: t.variances.clone(),
            noise_std: t.noise_std * lambda,
        });
        Ok(out)
    }

    /// Rows `idx` in order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() || idx.iter().any(|&i| i >= self.len()) {
            return Err(contract("row selection out of range or empty"));
        }
        let labels = self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect());
        let mut out = Self::new(self.xs.select_rows(idx), labels, self.scale_lambda, self.meta.clone())?;
        out.truth = self.truth.clone();
        Ok(out)
    }

    /// The first `count` rows, or everything when `count >= len`.
    pub fn truncate(&self, count: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..count.min(self.len())).collect();
        self.select(&idx)
    }
}
