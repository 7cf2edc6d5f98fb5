use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

#[allow(unused_imports)]
use num_traits::Float;

use super::evidence::information_matrix;
use crate::error::{contract, Result};

/// Per-example information matrices `Hᵢ = S⁻² + JᵢᵀJᵢ`.
#[derive(Clone, Debug)]
pub struct HessianStats {
    h: Vec<DMatrix<f64>>,
}

impl HessianStats {
    pub fn from_jacobians(prior_var: &[f64], jacobians: &[DMatrix<f64>]) -> Result<Self> {
        Self::new(jacobians.iter().map(|j| information_matrix(prior_var, j)).collect())
    }

    /// Diagonal-only representation.
    pub fn from_diagonals(diags: &[Vec<f64>]) -> Result<Self> {
        Self::new(diags.iter().map(|d| DMatrix::from_diagonal(&DVector::from_column_slice(d))).collect())
    }

    pub fn new(h: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = h.first().map(|m| m.nrows()).unwrap_or(0);
        if h.len() < 2 || h.iter().any(|m| m.shape() != (n, n)) {
            return Err(contract("HessianStats needs at least two n x n matrices"));
        }
        Ok(Self { h })
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.h[0].nrows()
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.h
    }

    pub fn mean(&self) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.dim(), self.dim());
        for m in &self.h {
            acc += m;
        }
        acc / self.len() as f64
    }

    /// `δ = hⱼⱼ / E[hⱼⱼ] - 1` per example and dimension.
    fn diag_deviations(&self) -> Vec<Vec<f64>> {
        let mean = self.mean();
        self.h
            .iter()
            .map(|m| (0..self.dim()).map(|k| m[(k, k)] / mean[(k, k)] - 1.0).collect())
            .collect()
    }

    /// Eigenvalues of `(EH)^{-½} Hᵢ (EH)^{-½}` minus one, per example.
    fn full_deviations(&self) -> Result<Vec<Vec<f64>>> {
        let eig = SymmetricEigen::new(self.mean());
        if eig.eigenvalues.iter().any(|l| !(*l > 0.0)) {
            return Err(contract("mean information matrix is not positive definite"));
        }
        let inv_sqrt = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()))
            * eig.eigenvectors.transpose();
        Ok(self
            .h
            .iter()
            .map(|m| {
                let w = &inv_sqrt * m * &inv_sqrt;
                let w = (&w + w.transpose()) * 0.5;
                SymmetricEigen::new(w).eigenvalues.iter().map(|l| l - 1.0).collect()
            })
            .collect())
    }
}

/// `¼ Σⱼ cv²[Hⱼⱼ]`, with the population variance over examples.
pub fn constant_sigma_penalty(stats: &HessianStats) -> f64 {
    let dev = stats.diag_deviations();
    0.25 * dev.iter().flatten().map(|d| d * d).sum::<f64>() / stats.len() as f64
}

/// `¼ E‖(EH)^{-½} H (EH)^{-½} - I‖²_F`.
pub fn constant_sigma_penalty_full(stats: &HessianStats) -> Result<f64> {
    let dev = stats.full_deviations()?;
    Ok(0.25 * dev.iter().flatten().map(|d| d * d).sum::<f64>() / stats.len() as f64)
}

/// Mean gap when every example shares `Σ̃ = (EH)⁻¹`, evaluated directly
/// from the per-eigenvalue form `½ Σ(λ - 1 - log λ)`.
pub fn mean_gap_at_shared_sigma(stats: &HessianStats, full: bool) -> Result<f64> {
    let dev = if full { stats.full_deviations()? } else { stats.diag_deviations() };
    Ok(dev.iter().flatten().map(|d| 0.5 * (d - (1.0 + d).ln())).sum::<f64>() / stats.len() as f64)
}

/// Bound on `|mean gap - penalty|` from the cubic remainder of
/// `½(δ - log(1 + δ)) = δ²/4 - δ³/6 + …`, valid for `|δ| < 1`.
pub fn penalty_remainder_bound(stats: &HessianStats, full: bool) -> Result<f64> {
    let dev = if full { stats.full_deviations()? } else { stats.diag_deviations() };
    let mut acc = 0.0;
    for d in dev.iter().flatten() {
        let a = d.abs();
        if a >= 1.0 {
            return Ok(f64::INFINITY);
        }
        acc += a * a * a / (6.0 * (1.0 - a));
    }
    Ok(acc / stats.len() as f64)
}
