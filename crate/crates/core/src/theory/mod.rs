//! Closed-form oracles for the constant-variance VAE analysis.
//!
//! Everything here is plain `f64`/`nalgebra` code with no tape, so it can
//! serve as ground truth for the trained models and the objectives.

mod decoder;
mod evidence;
mod identities;
mod penalty;
mod report;
mod stationarity;
mod tracelog;

pub use decoder::{optimal_decoder, optimal_decoder_jacobian, DecoderEval, JacobianEval, TheoryDataset};
pub use evidence::{
    elbo_evidence_gap, elbo_evidence_gap_full, exact_log_evidence_gaussian_t, exact_log_evidence_unit_t,
    information_matrix, zero_noise_log_evidence,
};
pub use identities::{mc_gradient_identities, GradientIdentityReport, IdentityCheck, QuadraticDecoder};
pub use penalty::{constant_sigma_penalty, constant_sigma_penalty_full, mean_gap_at_shared_sigma, penalty_remainder_bound, HessianStats};
pub use report::{MetricSummary, Report};
pub use stationarity::{stationarity_residuals, LatentModel, StationarityReport};
pub use tracelog::{random_spd, trace_log_analytic, trace_log_min, trace_log_objective, TraceLogConfig, TraceLogResult};

use nalgebra::DMatrix;

use crate::error::{contract, Result};

/// `log det` of a symmetric positive definite matrix via Cholesky.
pub fn spd_log_det(a: &DMatrix<f64>) -> Result<f64> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| contract("matrix is not symmetric positive definite"))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

pub(crate) fn is_symmetric(a: &DMatrix<f64>, tol: f64) -> bool {
    a.is_square() && (a - a.transpose()).amax() <= tol * a.amax().max(1.0)
}
