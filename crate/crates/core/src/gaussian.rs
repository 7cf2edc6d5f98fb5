//! Diagonal Gaussians, reparameterized sampling, closed-form KL and the
//! likelihood heads.
//!
//! Variances (not standard deviations) are the stored quantity. Network
//! heads that emit standard deviations are squared at the boundary and
//! clamped below at [`MIN_VARIANCE`].

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::str::FromStr;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::rng::Rng;
use crate::tape::{softplus, Tape, Var};
use crate::tensor::Tensor;

pub const MIN_VARIANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::Shape {
                op: "DiagGaussian::new",
                lhs: alloc::vec![mean.len()],
                rhs: alloc::vec![var.len()],
            });
        }
        if let Some(v) = var.iter().find(|v| !(**v > 0.0)) {
            return Err(contract(format!("variance must be positive, got {v}")));
        }
        Ok(Self { mean, var })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: alloc::vec![0.0; dim],
            var: alloc::vec![1.0; dim],
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.var)
            .zip(z)
            .map(|((m, v), z)| -0.5 * ((2.0 * PI * v).ln() + (z - m) * (z - m) / v))
            .sum()
    }
}

/// Converts a raw head output to a variance: `softplus(raw)^2`, floored.
/// Returns the variance and whether the floor was hit.
pub fn std_head_to_var(raw: f64) -> (f64, bool) {
    let s = softplus(raw);
    let v = s * s;
    if v > MIN_VARIANCE {
        (v, false)
    } else {
        (MIN_VARIANCE, true)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LikelihoodKind {
    BernoulliLogits,
    GaussianFixed,
    GaussianLearned,
    GaussianBaggins,
}

impl FromStr for LikelihoodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli" | "bernoulli-logits" => Ok(Self::BernoulliLogits),
            "gaussian-fixed" | "gaussian" => Ok(Self::GaussianFixed),
            "gaussian-learned" => Ok(Self::GaussianLearned),
            "gaussian-baggins" | "baggins" => Ok(Self::GaussianBaggins),
            other => Err(contract(format!("unknown likelihood `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodSpec {
    pub kind: LikelihoodKind,
    /// Isotropic variance `T` for [`LikelihoodKind::GaussianFixed`].
    pub fixed_var: Option<f64>,
    /// Information factor for [`LikelihoodKind::GaussianBaggins`].
    pub tau: Option<f64>,
}

impl LikelihoodSpec {
    pub fn bernoulli() -> Self {
        Self {
            kind: LikelihoodKind::BernoulliLogits,
            fixed_var: None,
            tau: None,
        }
    }

    pub fn gaussian_fixed(var: f64) -> Self {
        Self {
            kind: LikelihoodKind::GaussianFixed,
            fixed_var: Some(var),
            tau: None,
        }
    }

    pub fn gaussian_learned() -> Self {
        Self {
            kind: LikelihoodKind::GaussianLearned,
            fixed_var: None,
            tau: None,
        }
    }

    pub fn baggins(tau: f64) -> Self {
        Self {
            kind: LikelihoodKind::GaussianBaggins,
            fixed_var: None,
            tau: Some(tau),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            LikelihoodKind::GaussianFixed => match self.fixed_var {
                Some(t) if t > 0.0 => Ok(()),
                other => Err(contract(format!("GaussianFixed needs fixed_var > 0, got {other:?}"))),
            },
            LikelihoodKind::GaussianBaggins => match self.tau {
                Some(t) if t > 0.0 => Ok(()),
                other => Err(contract(format!("GaussianBaggins needs tau > 0, got {other:?}"))),
            },
            _ => Ok(()),
        }
    }

    pub fn needs_decoder_std(&self) -> bool {
        self.kind == LikelihoodKind::GaussianLearned
    }
}

/// Extra per-call likelihood parameters beyond the decoded mean.
#[derive(Clone, Copy, Debug)]
pub enum DecoderNoise<'a> {
    None,
    /// Per-dimension standard deviations (learned head).
    Std(&'a [f64]),
    /// Isotropic variance `t` (from the BAGGINS rule).
    Isotropic(f64),
}

/// `μ + sqrt(var) ⊙ ε`, `ε ~ N(0, I)`.
pub fn sample_reparam(q: &DiagGaussian, rng: &mut Rng) -> Vec<f64> {
    q.mean
        .iter()
        .zip(&q.var)
        .map(|(m, v)| m + v.sqrt() * rng.normal())
        .collect()
}

/// `KL(q || N(0, diag(prior_var)))`.
pub fn kl_to_prior(q: &DiagGaussian, prior_var: &[f64]) -> Result<f64> {
    if prior_var.len() != q.dim() {
        return Err(Error::Shape {
            op: "kl_to_prior",
            lhs: alloc::vec![q.dim()],
            rhs: alloc::vec![prior_var.len()],
        });
    }
    Ok(0.5
        * q.mean
            .iter()
            .zip(&q.var)
            .zip(prior_var)
            .map(|((m, v), s2)| {
                let r = v / s2;
                r + m * m / s2 - 1.0 - r.ln()
            })
            .sum::<f64>())
}

/// `log p(x | z)` for one example given the decoded parameters.
pub fn log_likelihood(x: &[f64], decoded_mean: &[f64], spec: &LikelihoodSpec, noise: DecoderNoise<'_>) -> Result<f64> {
    spec.validate()?;
    if x.len() != decoded_mean.len() {
        return Err(Error::Shape {
            op: "log_likelihood",
            lhs: alloc::vec![x.len()],
            rhs: alloc::vec![decoded_mean.len()],
        });
    }
    let m = x.len() as f64;
    let resid_sq = || -> f64 { x.iter().zip(decoded_mean).map(|(a, b)| (a - b) * (a - b)).sum() };
    match (spec.kind, noise) {
        (LikelihoodKind::BernoulliLogits, DecoderNoise::None) => Ok(x
            .iter()
            .zip(decoded_mean)
            .map(|(xi, l)| xi * l - softplus(*l))
            .sum()),
        (LikelihoodKind::GaussianFixed, DecoderNoise::None) => {
            let t = spec.fixed_var.unwrap_or(1.0);
            Ok(-0.5 * (m * (2.0 * PI * t).ln() + resid_sq() / t))
        }
        (LikelihoodKind::GaussianLearned, DecoderNoise::Std(std)) => {
            if std.len() != x.len() {
                return Err(Error::Shape {
                    op: "log_likelihood",
                    lhs: alloc::vec![x.len()],
                    rhs: alloc::vec![std.len()],
                });
            }
            Ok(x.iter()
                .zip(decoded_mean)
                .zip(std)
                .map(|((xi, mu), s)| {
                    let v = (s * s).max(MIN_VARIANCE);
                    -0.5 * ((2.0 * PI * v).ln() + (xi - mu) * (xi - mu) / v)
                })
                .sum())
        }
        (LikelihoodKind::GaussianBaggins, DecoderNoise::Isotropic(t)) => {
            Ok(-0.5 * (m * (2.0 * PI * t).ln() + resid_sq() / t))
        }
        (kind, noise) => Err(contract(format!(
            "likelihood {kind:?} cannot take decoder noise {noise:?}"
        ))),
    }
}

/// Batch-mean KL to `N(0, diag(prior_var))` on the tape.
///
/// `var` is either per example (`[B, n]`) or shared (`[n]`); `prior_var` is
/// `[n]` and may carry gradient (floating prior).
pub fn kl_batch_mean(tape: &Tape, mu: Var, var: Var, prior_var: Var) -> Result<Var> {
    let (b, n) = tape.value(mu).dims2();
    let var_is_row = tape.value(var).shape().len() == 1;
    let inv_prior = tape.recip(prior_var);
    let mu_sq = tape.mean_rows(tape.square(mu));
    // E_B[var + μ²] per dimension
    let (second, mean_log_var) = if var_is_row {
        let s = tape.add(tape_reshape_row(tape, var, n)?, mu_sq)?;
        (s, tape.sum(tape.ln(var)))
    } else {
        let v = tape.mean_rows(var);
        let s = tape.add(v, mu_sq)?;
        let lv = tape.scale(tape.sum(tape.ln(var)), 1.0 / b as f64);
        (s, lv)
    };
    let trace = tape.sum(tape.mul(second, inv_prior)?);
    let log_prior = tape.sum(tape.ln(prior_var));
    // ½ (tr - n - Σ ln var + Σ ln s²)
    let t = tape.sub(trace, mean_log_var)?;
    let t = tape.add(t, log_prior)?;
    Ok(tape.scale(tape.add_scalar(t, -(n as f64)), 0.5))
}

fn tape_reshape_row(tape: &Tape, v: Var, n: usize) -> Result<Var> {
    if tape.value(v).shape() == [n] {
        Ok(v)
    } else {
        Err(Error::Shape {
            op: "kl_batch_mean",
            lhs: alloc::vec![n],
            rhs: tape.shape(v),
        })
    }
}

/// Reparameterized draw on the tape: `mu + sqrt(var) ⊙ eps`.
/// `var` is `[B, n]` or a shared row `[n]`.
pub fn reparam_tape(tape: &Tape, mu: Var, var: Var, eps: Tensor) -> Result<Var> {
    let eps = tape.constant(eps);
    let sd = tape.sqrt(var);
    let noise = if tape.value(var).shape().len() == 1 {
        tape.mul_row(eps, sd)?
    } else {
        tape.mul(eps, sd)?
    };
    tape.add(mu, noise)
}
