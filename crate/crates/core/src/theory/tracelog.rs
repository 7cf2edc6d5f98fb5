use nalgebra::{DMatrix, DVector};

#[allow(unused_imports)]
use num_traits::Float;

use super::{is_symmetric, spd_log_det};
use crate::error::{contract, Result};
use crate::rng::Rng;

/// `tr(AΣ) - log det(eΣ)`.
pub fn trace_log_objective(a: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != sigma.shape() || !a.is_square() {
        return Err(contract("trace-log objective needs equal square matrices"));
    }
    Ok((a * sigma).trace() - a.nrows() as f64 - spd_log_det(sigma)?)
}

fn check_spd(a: &DMatrix<f64>) -> Result<()> {
    if !is_symmetric(a, 1e-12) || a.clone().cholesky().is_none() {
        return Err(contract("trace-log minimization needs a symmetric positive definite matrix"));
    }
    Ok(())
}

/// The exact minimizer `Σ = A⁻¹` and the objective evaluated there.
pub fn trace_log_analytic(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    check_spd(a)?;
    let inv = a.clone().cholesky().expect("checked").inverse();
    let inv = (&inv + inv.transpose()) * 0.5;
    let value = trace_log_objective(a, &inv)?;
    Ok((inv, value))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceLogConfig {
    pub steps: usize,
    /// Probe vectors per step.
    pub probes: usize,
    /// Optimize over full SPD `Σ` rather than diagonal `Σ`.
    pub full: bool,
    pub lr: f64,
}

impl Default for TraceLogConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            probes: 4,
            full: true,
            lr: 0.05,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TraceLogResult {
    pub sigma_star: DMatrix<f64>,
    /// Objective evaluated exactly at `sigma_star`.
    pub value: f64,
}

/// Minimizes `tr(AΣ) - log det(eΣ)` by stochastic descent on a factor
/// `Σ = LLᵀ`. `A` enters only through probe products `A v`, `v = Lε`.
///
/// The step is the gradient preconditioned by `Σ` (a relative update
/// `L ← L - η L (Lᵀ A v εᵀ - I)`), whose fixed point is `LᵀAL = I`
/// regardless of the conditioning of `A`. The step size decays as
/// `η / (1 + t/1000)` and `Σ` is averaged over the second half of the run.
pub fn trace_log_min(a: &DMatrix<f64>, cfg: &TraceLogConfig, rng: &mut Rng) -> Result<TraceLogResult> {
    check_spd(a)?;
    if cfg.steps == 0 || cfg.probes == 0 || !(cfg.lr > 0.0) {
        return Err(contract("trace-log config needs steps, probes and lr positive"));
    }
    let n = a.nrows();
    let mut l = DMatrix::from_diagonal(&DVector::from_iterator(n, (0..n).map(|k| 1.0 / a[(k, k)].sqrt())));
    let mut avg = DMatrix::zeros(n, n);
    let mut counted = 0usize;
    let burn = cfg.steps / 2;
    for t in 0..cfg.steps {
        let eta = cfg.lr / (1.0 + t as f64 / 1000.0);
        let mut g = DMatrix::zeros(n, n);
        for _ in 0..cfg.probes {
            let eps = DVector::from_vec(rng.normal_vec(n));
            let av = a * (&l * &eps);
            let b = l.tr_mul(&av);
            g += b * eps.transpose();
        }
        g /= cfg.probes as f64;
        g -= DMatrix::identity(n, n);
        if !cfg.full {
            g = DMatrix::from_diagonal(&g.diagonal());
        }
        l -= (&l * g) * eta;
        if t >= burn {
            avg += &l * l.transpose();
            counted += 1;
        }
    }
    let mut sigma = avg / counted as f64;
    sigma = (&sigma + sigma.transpose()) * 0.5;
    let value = trace_log_objective(a, &sigma)?;
    if !value.is_finite() {
        return Err(crate::error::Error::NonFinite("trace-log descent diverged".into()));
    }
    Ok(TraceLogResult { sigma_star: sigma, value })
}

/// Random SPD matrix with eigenvalues drawn from `[lo, hi]`.
pub fn random_spd(rng: &mut Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.normal());
    let q = g.qr().q();
    let d = DVector::from_iterator(n, (0..n).map(|_| rng.uniform_range(lo, hi)));
    let a = &q * DMatrix::from_diagonal(&d) * q.transpose();
    (&a + a.transpose()) * 0.5
}
