use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

#[allow(unused_imports)]
use num_traits::Float;

use super::Dataset;
use crate::error::{contract, Result};
use crate::tensor::Tensor;

/// Mean log density of the rows of `xs` under
/// `N(0, A diag(variances) Aᵀ + T I)`, via an eigendecomposition of the
/// covariance.
pub fn ppca_log_evidence_with(a: &DMatrix<f64>, variances: &[f64], likelihood_var: f64, xs: &Tensor) -> Result<f64> {
    let m = xs.cols();
    if a.nrows() != m || a.ncols() != variances.len() || !(likelihood_var > 0.0) {
        return Err(contract("ppca: shape mismatch or non-positive likelihood variance"));
    }
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(variances));
    let cov = a * d * a.transpose() + DMatrix::identity(m, m) * likelihood_var;
    let eig = SymmetricEigen::new((&cov + cov.transpose()) * 0.5);
    if eig.eigenvalues.iter().any(|l| !(*l > 0.0)) {
        return Err(contract("ppca covariance is not positive definite"));
    }
    let logdet: f64 = eig.eigenvalues.iter().map(|l| l.ln()).sum();
    let mut total = 0.0;
    for i in 0..xs.rows() {
        let x = DVector::from_column_slice(xs.row(i));
        let proj = eig.eigenvectors.tr_mul(&x);
        let maha: f64 = proj.iter().zip(eig.eigenvalues.iter()).map(|(p, l)| p * p / l).sum();
        total += maha;
    }
    let n = xs.rows() as f64;
    Ok(-0.5 * (m as f64 * (2.0 * PI).ln() + logdet) - 0.5 * total / n)
}

/// Analytic mean log evidence of a dataset with linear-Gaussian ground
/// truth, for likelihood variance `likelihood_var`.
pub fn ppca_log_evidence(ds: &Dataset, likelihood_var: f64) -> Result<f64> {
    let t = ds
        .truth()
        .ok_or_else(|| contract("ppca evidence needs a dataset with linear ground truth"))?;
    ppca_log_evidence_with(&t.a, &t.variances, likelihood_var, ds.xs())
}
