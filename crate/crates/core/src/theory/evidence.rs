use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DMatrix;

#[allow(unused_imports)]
use num_traits::Float;

use super::spd_log_det;
use crate::error::{contract, Error, Result};

fn check(prior_var: &[f64], j: &DMatrix<f64>, residual_len: usize) -> Result<()> {
    if j.ncols() != prior_var.len() || j.nrows() != residual_len {
        return Err(Error::Shape {
            op: "log_evidence",
            lhs: alloc::vec![j.nrows(), j.ncols()],
            rhs: alloc::vec![residual_len, prior_var.len()],
        });
    }
    if prior_var.iter().any(|s| !(*s > 0.0)) {
        return Err(contract("prior variance must be positive"));
    }
    Ok(())
}

fn prior_quad(z: &[f64], prior_var: &[f64]) -> f64 {
    z.iter().zip(prior_var).map(|(z, s)| z * z / s).sum()
}

/// `S Jᵀ J S`, whose `+ I` has the same determinant as `JᵀJ S² + I`.
fn scaled_gram(prior_var: &[f64], j: &DMatrix<f64>) -> DMatrix<f64> {
    let s = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(prior_var.len(), prior_var.iter().map(|v| v.sqrt())));
    let js = j * &s;
    js.tr_mul(&js)
}

/// Exact log evidence of a locally linear decoder with unit Gaussian noise,
/// `-½(m log 2π + |S⁻¹z|² + |x - ν(z)|² + log det(JᵀJ S² + I))`.
pub fn exact_log_evidence_unit_t(z: &[f64], prior_var: &[f64], j: &DMatrix<f64>, residual: &[f64]) -> Result<f64> {
    check(prior_var, j, residual.len())?;
    let n = prior_var.len();
    let logdet = spd_log_det(&(scaled_gram(prior_var, j) + DMatrix::identity(n, n)))?;
    let m = residual.len() as f64;
    let r2: f64 = residual.iter().map(|r| r * r).sum();
    Ok(-0.5 * (m * (2.0 * PI).ln() + prior_quad(z, prior_var) + r2 + logdet))
}

/// Exact log evidence with diagonal Gaussian noise `T`,
/// `-½(m log 2π + |S⁻¹μ|² + rᵀT⁻¹r + log det(J S² Jᵀ + T))`.
pub fn exact_log_evidence_gaussian_t(
    mu: &[f64],
    prior_var: &[f64],
    j: &DMatrix<f64>,
    residual: &[f64],
    t: &[f64],
) -> Result<f64> {
    check(prior_var, j, residual.len())?;
    if t.len() != residual.len() || t.iter().any(|v| !(*v > 0.0)) {
        return Err(contract("T must be positive with one entry per data dimension"));
    }
    let m = residual.len();
    let s2 = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(prior_var));
    let cov = j * s2 * j.transpose() + DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(t));
    let maha: f64 = residual.iter().zip(t).map(|(r, t)| r * r / t).sum();
    Ok(-0.5 * (m as f64 * (2.0 * PI).ln() + prior_quad(mu, prior_var) + maha + spd_log_det(&cov)?))
}

/// The `T → 0` limit for a square invertible `J`:
/// `-½(m log 2π + |S⁻¹μ|² + log det(J S² Jᵀ))`.
pub fn zero_noise_log_evidence(mu: &[f64], prior_var: &[f64], j: &DMatrix<f64>) -> Result<f64> {
    if !j.is_square() {
        return Err(contract("zero-noise limit needs a square Jacobian"));
    }
    check(prior_var, j, j.nrows())?;
    let det = j.clone().lu().determinant();
    if det == 0.0 {
        return Err(contract("Jacobian is singular"));
    }
    let logdet = 2.0 * det.abs().ln() + prior_var.iter().map(|s| s.ln()).sum::<f64>();
    let m = j.nrows() as f64;
    Ok(-0.5 * (m * (2.0 * PI).ln() + prior_quad(mu, prior_var) + logdet))
}

/// `H = S⁻² + JᵀJ`.
pub fn information_matrix(prior_var: &[f64], j: &DMatrix<f64>) -> DMatrix<f64> {
    let prec: Vec<f64> = prior_var.iter().map(|s| 1.0 / s).collect();
    j.tr_mul(j) + DMatrix::from_diagonal(&nalgebra::DVector::from_vec(prec))
}

/// ELBO-to-evidence gap `½(tr(HΣ) - log det(eHΣ))` for diagonal `Σ`, using
/// the diagonal of `H`.
pub fn elbo_evidence_gap(prior_var: &[f64], j: &DMatrix<f64>, sigma: &[f64]) -> Result<f64> {
    if sigma.len() != prior_var.len() || sigma.iter().any(|s| !(*s > 0.0)) {
        return Err(contract("sigma must be positive with one entry per latent dimension"));
    }
    check(prior_var, j, j.nrows())?;
    let h = information_matrix(prior_var, j);
    Ok(0.5
        * sigma
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let l = h[(k, k)] * s;
                l - 1.0 - l.ln()
            })
            .sum::<f64>())
}

/// Full-matrix gap `½(tr(HΣ) - n - log det(HΣ))` for SPD `Σ`.
pub fn elbo_evidence_gap_full(prior_var: &[f64], j: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    check(prior_var, j, j.nrows())?;
    let n = prior_var.len();
    if sigma.shape() != (n, n) {
        return Err(contract("sigma must be n x n"));
    }
    let h = information_matrix(prior_var, j);
    let tr = (&h * sigma).trace();
    Ok(0.5 * (tr - n as f64 - spd_log_det(&h)? - spd_log_det(sigma)?))
}
