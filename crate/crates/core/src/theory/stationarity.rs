use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

#[allow(unused_imports)]
use num_traits::Float;

use super::evidence::information_matrix;
use super::report::{MetricSummary, Report};
use crate::error::{contract, Result};
use crate::fd;
use crate::gaussian::DiagGaussian;
use crate::stats::median;
use crate::tensor::Tensor;

/// A trained encoder/decoder pair seen as plain functions.
pub trait LatentModel {
    fn latent_dim(&self) -> usize;
    fn data_dim(&self) -> usize;
    fn encode_one(&self, x: &[f64]) -> Result<DiagGaussian>;
    fn decode_mean(&self, z: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Clone, Debug, Default)]
pub struct StationarityReport {
    /// `‖μ - S²Jᵀ(x - ν(μ))/t‖ / ‖μ‖` per example.
    pub mean_residuals: Vec<f64>,
    /// `‖Σ⁻¹ - (S⁻² + JᵀJ/t)‖_F / ‖Σ⁻¹‖_F` per example.
    pub precision_residuals: Vec<f64>,
}

impl StationarityReport {
    pub fn mean_median(&self) -> f64 {
        median(&self.mean_residuals)
    }

    pub fn precision_median(&self) -> f64 {
        median(&self.precision_residuals)
    }

    pub fn report(&self) -> Report {
        let mut r = Report::new();
        r.insert("posterior_mean_residual".into(), MetricSummary::from_values(&self.mean_residuals, 0));
        r.insert("posterior_precision_residual".into(), MetricSummary::from_values(&self.precision_residuals, 0));
        r
    }
}

/// Residuals of the posterior stationarity conditions at each row of `xs`
/// for isotropic likelihood variance `noise_var`. The decoder Jacobian at
/// `μ` comes from central differences with step `1e-4 (1 + ‖μ‖∞)`.
pub fn stationarity_residuals(
    model: &dyn LatentModel,
    xs: &Tensor,
    prior_var: &[f64],
    noise_var: f64,
) -> Result<StationarityReport> {
    let n = model.latent_dim();
    if prior_var.len() != n || xs.cols() != model.data_dim() || !(noise_var > 0.0) {
        return Err(contract("stationarity_residuals: dimension or noise mismatch"));
    }
    let s2 = DVector::from_column_slice(prior_var);
    let mut out = StationarityReport::default();
    for i in 0..xs.rows() {
        let x = xs.row(i);
        let q = model.encode_one(x)?;
        let mu = q.mean();
        let h = 1e-4 * (1.0 + mu.iter().fold(0.0f64, |a, v| a.max(v.abs())));
        let j = fd::jacobian(|z| model.decode_mean(z).expect("decoder evaluates"), mu, h);
        let nu = model.decode_mean(mu)?;
        let r = DVector::from_iterator(x.len(), x.iter().zip(&nu).map(|(a, b)| a - b));
        let pred = s2.component_mul(&(j.tr_mul(&r) / noise_var));
        let muv = DVector::from_column_slice(mu);
        out.mean_residuals.push((&muv - pred).norm() / muv.norm());

        let info = information_matrix(prior_var, &(&j / noise_var.sqrt()));
        let prec = DMatrix::from_diagonal(&DVector::from_iterator(n, q.var().iter().map(|v| 1.0 / v)));
        out.precision_residuals.push((&prec - info).norm() / prec.norm());
    }
    Ok(out)
}
