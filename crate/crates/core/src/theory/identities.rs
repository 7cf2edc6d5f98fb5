use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{contract, Result};
use crate::gaussian::DiagGaussian;
use crate::rng::Rng;
use crate::stats;

/// `ν_k(z) = (Wz + b)_k + κ Σⱼ C_kj zⱼ²`; linear when `κ = 0`.
#[derive(Clone, Debug)]
pub struct QuadraticDecoder {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DMatrix<f64>,
    pub kappa: f64,
}

impl QuadraticDecoder {
    pub fn linear(w: DMatrix<f64>, b: DVector<f64>) -> Self {
        let c = DMatrix::zeros(w.nrows(), w.ncols());
        Self { w, b, c, kappa: 0.0 }
    }

    pub fn eval(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut v = &self.w * z + &self.b;
        if self.kappa != 0.0 {
            v += (&self.c * z.component_mul(z)) * self.kappa;
        }
        v
    }

    pub fn jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let mut j = self.w.clone();
        if self.kappa != 0.0 {
            j += &self.c * DMatrix::from_diagonal(z) * (2.0 * self.kappa);
        }
        j
    }
}

/// A Monte-Carlo estimate next to its closed form.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityCheck {
    pub name: String,
    pub estimate: f64,
    pub std_err: f64,
    pub analytic: f64,
}

impl IdentityCheck {
    fn from_samples(name: String, samples: &[f64], analytic: f64) -> Self {
        Self {
            name,
            estimate: stats::mean(samples),
            std_err: stats::std_err(samples),
            analytic,
        }
    }

    /// `|estimate - analytic|` in standard errors.
    pub fn z_score(&self) -> f64 {
        (self.estimate - self.analytic).abs() / self.std_err
    }

    pub fn passes(&self, max_se: f64) -> bool {
        self.z_score() <= max_se
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradientIdentityReport {
    /// `∂/∂μ E[log p]` against `-(ν(μ) - x)ᵀJ`.
    pub mean: Vec<IdentityCheck>,
    /// `∂/∂Σⱼⱼ E[log p]` (common-random-number differences) against
    /// `-½(JᵀJ)ⱼⱼ`.
    pub var_diag: Vec<IdentityCheck>,
    /// Full `∂/∂Σ` by the score-function estimator against `-½JᵀJ`.
    pub var_full: Vec<IdentityCheck>,
}

impl GradientIdentityReport {
    pub fn checks(&self) -> impl Iterator<Item = &IdentityCheck> {
        self.mean.iter().chain(&self.var_diag).chain(&self.var_full)
    }

    pub fn max_z(&self) -> f64 {
        self.checks().map(IdentityCheck::z_score).fold(0.0, f64::max)
    }
}

/// Checks the derivatives of `E_{N(z; μ, Σ)}[log N(x; ν(z), I)]` for a
/// single example (no `1/N` factor) against the first-order identities.
/// Exact for linear decoders up to MC error.
pub fn mc_gradient_identities(
    x: &[f64],
    q: &DiagGaussian,
    decoder: &QuadraticDecoder,
    n_samples: usize,
    rng: &mut Rng,
) -> Result<GradientIdentityReport> {
    let n = q.dim();
    let m = x.len();
    if decoder.w.shape() != (m, n) || decoder.b.len() != m || decoder.c.shape() != (m, n) {
        return Err(contract("decoder shape does not match the example"));
    }
    if n_samples < 2 {
        return Err(contract("need at least two samples"));
    }
    let xv = DVector::from_column_slice(x);
    let mu = DVector::from_column_slice(q.mean());
    let var = q.var();
    let loglik = |z: &DVector<f64>| -0.5 * (decoder.eval(z) - &xv).norm_squared();
    let j = decoder.jacobian(&mu);
    let grad_mu = j.tr_mul(&(&xv - decoder.eval(&mu)));
    let jtj = j.tr_mul(&j);
    let baseline = loglik(&mu);

    let h_mu = 1e-5;
    let mut mean_s = alloc::vec![Vec::with_capacity(n_samples); n];
    let mut diag_s = alloc::vec![Vec::with_capacity(n_samples); n];
    let mut full_s = alloc::vec![Vec::with_capacity(n_samples); n * (n + 1) / 2];
    let sd: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    for _ in 0..n_samples {
        let eps = DVector::from_vec(rng.normal_vec(n));
        let z = DVector::from_iterator(n, (0..n).map(|k| mu[k] + sd[k] * eps[k]));
        for k in 0..n {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += h_mu;
            zm[k] -= h_mu;
            mean_s[k].push((loglik(&zp) - loglik(&zm)) / (2.0 * h_mu));

            let h = 1e-4 * var[k];
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] = mu[k] + (var[k] + h).sqrt() * eps[k];
            zm[k] = mu[k] + (var[k] - h).sqrt() * eps[k];
            diag_s[k].push((loglik(&zp) - loglik(&zm)) / (2.0 * h));
        }
        let f = loglik(&z) - baseline;
        let s: Vec<f64> = (0..n).map(|k| eps[k] / sd[k]).collect();
        let mut idx = 0;
        for a in 0..n {
            for b in a..n {
                let inv = if a == b { 1.0 / var[a] } else { 0.0 };
                full_s[idx].push(0.5 * f * (s[a] * s[b] - inv));
                idx += 1;
            }
        }
    }
    let mut report = GradientIdentityReport::default();
    for k in 0..n {
        report
            .mean
            .push(IdentityCheck::from_samples(format!("d_mu[{k}]"), &mean_s[k], grad_mu[k]));
        report
            .var_diag
            .push(IdentityCheck::from_samples(format!("d_sigma[{k}]"), &diag_s[k], -0.5 * jtj[(k, k)]));
    }
    let mut idx = 0;
    for a in 0..n {
        for b in a..n {
            report.var_full.push(IdentityCheck::from_samples(
                format!("d_sigma_score[{a},{b}]"),
                &full_s[idx],
                -0.5 * jtj[(a, b)],
            ));
            idx += 1;
        }
    }
    Ok(report)
}
