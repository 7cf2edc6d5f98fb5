//! Training objectives: the Gaussian ELBO with learned or constant posterior
//! variance, BILBO, the BAGGINS likelihood-variance rule and the fused
//! BILBO+BAGGINS bound.
//!
//! All bounds are returned as quantities to maximize, averaged over the
//! batch. The batch second moment `M_B` is differentiable, so the prior term
//! pushes gradient into the encoder means. In the BAGGINS rule the trace
//! `tr(Σ⁻¹S²)` is read off the batch and held constant.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::str::FromStr;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::gaussian::{kl_batch_mean, reparam_tape, DiagGaussian, LikelihoodKind, LikelihoodSpec, MIN_VARIANCE};
use crate::rng::Rng;
use crate::stats::median;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Lower clamp on the BAGGINS variance scalar.
pub const BAGGINS_T_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveMode {
    ElboLearnedSigma,
    ElboConstSigma,
    Bilbo,
    BilboBaggins,
}

impl ObjectiveMode {
    pub const ALL: [ObjectiveMode; 4] = [
        ObjectiveMode::ElboLearnedSigma,
        ObjectiveMode::ElboConstSigma,
        ObjectiveMode::Bilbo,
        ObjectiveMode::BilboBaggins,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ElboLearnedSigma => "elbo-learned",
            Self::ElboConstSigma => "elbo-const",
            Self::Bilbo => "bilbo",
            Self::BilboBaggins => "bilbo-baggins",
        }
    }

    pub fn learns_sigma(self) -> bool {
        self == Self::ElboLearnedSigma
    }
}

impl FromStr for ObjectiveMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| contract(format!("unknown objective mode `{s}`")))
    }
}

impl core::fmt::Display for ObjectiveMode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub mode: ObjectiveMode,
    /// Diagonal of the constant posterior variance Σ.
    pub sigma_const: Vec<f64>,
    pub likelihood: LikelihoodSpec,
    pub mc_samples: usize,
}

impl ObjectiveSpec {
    pub fn new(mode: ObjectiveMode, sigma_const: Vec<f64>, likelihood: LikelihoodSpec) -> Self {
        Self {
            mode,
            sigma_const,
            likelihood,
            mc_samples: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 {
            return Err(contract("mc_samples must be at least 1"));
        }
        if !self.mode.learns_sigma() && self.sigma_const.iter().any(|s| !(*s > 0.0)) {
            return Err(contract("sigma_const must be strictly positive"));
        }
        if self.mode == ObjectiveMode::BilboBaggins && self.likelihood.kind != LikelihoodKind::GaussianBaggins {
            return Err(contract("bilbo-baggins requires the GaussianBaggins likelihood"));
        }
        self.likelihood.validate()
    }
}

/// Batch second moment and the floating prior built from it.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchMoments {
    pub m_b: Vec<f64>,
    pub s2: Vec<f64>,
}

/// `M_B = E_B[μ ⊙ μ]` over the rows of `mu`.
pub fn batch_second_moment(mu: &Tensor) -> Vec<f64> {
    let (b, n) = mu.dims2();
    let mut m = vec![0.0; n];
    for i in 0..b {
        for (acc, v) in m.iter_mut().zip(mu.row(i)) {
            *acc += v * v;
        }
    }
    m.iter_mut().for_each(|v| *v /= b as f64);
    m
}

/// `S² = Σ + M_B`.
pub fn floating_prior(m_b: &[f64], sigma_const: &[f64]) -> Result<BatchMoments> {
    if m_b.len() != sigma_const.len() {
        return Err(Error::Shape {
            op: "floating_prior",
            lhs: vec![m_b.len()],
            rhs: vec![sigma_const.len()],
        });
    }
    if m_b.iter().any(|v| !(*v >= 0.0)) || sigma_const.iter().any(|v| !(*v > 0.0)) {
        return Err(contract("floating_prior needs M_B >= 0 and Σ > 0"));
    }
    Ok(BatchMoments {
        m_b: m_b.to_vec(),
        s2: m_b.iter().zip(sigma_const).map(|(m, s)| m + s).collect(),
    })
}

/// Optimal diagonal prior variance: the mean of `var + μ²` over posteriors.
pub fn optimal_prior(posteriors: &[DiagGaussian]) -> Result<Vec<f64>> {
    let first = posteriors
        .first()
        .ok_or_else(|| contract("optimal_prior needs at least one posterior"))?;
    let n = first.dim();
    let mut s2 = vec![0.0; n];
    for q in posteriors {
        if q.dim() != n {
            return Err(Error::Shape {
                op: "optimal_prior",
                lhs: vec![n],
                rhs: vec![q.dim()],
            });
        }
        for ((acc, m), v) in s2.iter_mut().zip(q.mean()).zip(q.var()) {
            *acc += v + m * m;
        }
    }
    let k = posteriors.len() as f64;
    Ok(s2.into_iter().map(|v| v / k).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BagginsT {
    pub t: f64,
    /// The raw value fell below [`BAGGINS_T_FLOOR`].
    pub floored: bool,
}

/// Isotropic likelihood variance `t = τ |x - ν|² / tr(Σ⁻¹S²)`.
pub fn baggins_variance(x: &[f64], decoded_mean: &[f64], sigma_const: &[f64], s2: &[f64], tau: f64) -> Result<BagginsT> {
    if !(tau > 0.0) {
        return Err(contract(format!("tau must be positive, got {tau}")));
    }
    if x.len() != decoded_mean.len() || sigma_const.len() != s2.len() {
        return Err(Error::Shape {
            op: "baggins_variance",
            lhs: vec![x.len(), sigma_const.len()],
            rhs: vec![decoded_mean.len(), s2.len()],
        });
    }
    let trace: f64 = s2.iter().zip(sigma_const).map(|(s, v)| s / v).sum();
    if !(trace > 0.0) {
        return Err(contract("tr(Σ⁻¹S²) must be positive"));
    }
    let resid: f64 = x.iter().zip(decoded_mean).map(|(a, b)| (a - b) * (a - b)).sum();
    let t = tau * resid / trace;
    Ok(if t >= BAGGINS_T_FLOOR {
        BagginsT { t, floored: false }
    } else {
        BagginsT {
            t: BAGGINS_T_FLOOR,
            floored: true,
        }
    })
}

/// Decoder output on a tape.
#[derive(Clone, Copy, Debug)]
pub struct Decoded {
    /// `[B, m]` means (Gaussian) or logits (Bernoulli).
    pub mean: Var,
    /// `[B, m]` standard deviations for the learned-variance head.
    pub std: Option<Var>,
}

/// Encoder output on a tape.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// `[B, n]` posterior means.
    pub mu: Var,
    /// `[B, n]` posterior variances (learned-Σ models only).
    pub var: Option<Var>,
}

/// An encoder/decoder pair that can be evaluated on a tape.
pub trait VaeModel {
    fn encode(&self, tape: &Tape, x: Var) -> Result<Encoded>;
    fn decode(&self, tape: &Tape, z: Var) -> Result<Decoded>;
}

/// Everything one batch evaluation produces.
#[derive(Clone, Debug)]
pub struct BatchObjective {
    /// Scalar bound on the tape (maximize).
    pub bound: Var,
    pub value: f64,
    /// Negative KL (ELBO modes) or the BILBO information term.
    pub prior_term: f64,
    /// Expected log likelihood (fused BAGGINS: the remaining two terms).
    pub loglik_term: f64,
    /// `tr S²` of the prior in use.
    pub tr_s2: f64,
    /// Per-example likelihood variance summaries: BAGGINS `t`, the median
    /// learned variance, or the fixed `T`.
    pub t_values: Vec<f64>,
    /// Count of BAGGINS floor hits.
    pub floored: usize,
}

/// Evaluates `spec` on a batch already encoded on `tape`.
pub fn batch_objective(
    tape: &Tape,
    spec: &ObjectiveSpec,
    x: Var,
    enc: Encoded,
    decode: &dyn Fn(&Tape, Var) -> Result<Decoded>,
    rng: &mut Rng,
) -> Result<BatchObjective> {
    spec.validate()?;
    let (b, n) = tape.value(enc.mu).dims2();
    if b == 0 {
        return Err(contract("empty batch"));
    }
    let m_b = tape.mean_rows(tape.square(enc.mu));
    let m_b_val = tape.value(m_b).data().to_vec();

    let (post_var, prior_term, traces, tr_s2): (Var, Var, Vec<f64>, f64) = match spec.mode {
        ObjectiveMode::ElboLearnedSigma => {
            let var = enc
                .var
                .ok_or_else(|| contract("elbo-learned needs an encoder variance head"))?;
            let prior = tape.constant(Tensor::ones(&[n]));
            let kl = kl_batch_mean(tape, enc.mu, var, prior)?;
            let traces = {
                let v = tape.value(var);
                (0..b).map(|i| v.row(i).iter().map(|s| 1.0 / s).sum()).collect()
            };
            (var, tape.neg(kl), traces, n as f64)
        }
        mode => {
            if enc.var.is_some() {
                return Err(contract(format!("{mode} uses constant Σ; the encoder must not emit variances")));
            }
            check_len(&spec.sigma_const, n, "sigma_const")?;
            let sigma = tape.constant(Tensor::vector(spec.sigma_const.clone()));
            let moments = floating_prior(&m_b_val, &spec.sigma_const)?;
            let trace: f64 = moments.s2.iter().zip(&spec.sigma_const).map(|(s, v)| s / v).sum();
            let term = if mode == ObjectiveMode::ElboConstSigma {
                let prior = tape.add(sigma, m_b)?;
                tape.neg(kl_batch_mean(tape, enc.mu, sigma, prior)?)
            } else {
                information_term(tape, m_b, &spec.sigma_const)
            };
            (sigma, term, vec![trace; b], moments.s2.iter().sum())
        }
    };

    let k = spec.mc_samples;
    let mut ll_sum: Option<Var> = None;
    let mut t_values = vec![0.0; b];
    let mut floored = 0;
    for _ in 0..k {
        let eps = Tensor::new(&[b, n], rng.normal_vec(b * n))?;
        let z = reparam_tape(tape, enc.mu, post_var, eps)?;
        let dec = decode(tape, z)?;
        let (ll, ts, fl) = if spec.mode == ObjectiveMode::BilboBaggins {
            fused_baggins_tail(tape, x, dec, &traces, spec.likelihood.tau.unwrap_or(1.0))?
        } else {
            loglik_batch_mean(tape, x, dec, &spec.likelihood, &traces)?
        };
        floored += fl;
        for (acc, t) in t_values.iter_mut().zip(ts) {
            *acc += t / k as f64;
        }
        ll_sum = Some(match ll_sum {
            Some(acc) => tape.add(acc, ll)?,
            None => ll,
        });
    }
    let mut ll = tape.scale(ll_sum.expect("mc_samples >= 1"), 1.0 / k as f64);
    if spec.mode == ObjectiveMode::BilboBaggins {
        // -(1/2τ) tr(I + Σ⁻¹M_B), differentiable through M_B
        let tau = spec.likelihood.tau.unwrap_or(1.0);
        let ratio = tape.mul(m_b, tape.constant(Tensor::vector(spec.sigma_const.iter().map(|s| 1.0 / s).collect())))?;
        let tr = tape.add_scalar(tape.sum(ratio), n as f64);
        ll = tape.add(ll, tape.scale(tr, -0.5 / tau))?;
    }
    let bound = tape.add(prior_term, ll)?;
    Ok(BatchObjective {
        bound,
        value: tape.scalar(bound),
        prior_term: tape.scalar(prior_term),
        loglik_term: tape.scalar(ll),
        tr_s2,
        t_values,
        floored,
    })
}

/// `-½ log det(I + Σ⁻¹ M_B)` for diagonal inputs.
fn information_term(tape: &Tape, m_b: Var, sigma_const: &[f64]) -> Var {
    let inv = tape.constant(Tensor::vector(sigma_const.iter().map(|s| 1.0 / s).collect()));
    let ratio = tape.mul(m_b, inv).expect("lengths checked");
    let logdet = tape.sum(tape.ln(tape.add_scalar(ratio, 1.0)));
    tape.scale(logdet, -0.5)
}

fn check_len(v: &[f64], n: usize, what: &str) -> Result<()> {
    if v.len() != n {
        return Err(contract(format!("{what} has length {}, latent dim is {n}", v.len())));
    }
    Ok(())
}

/// Per-example `t` on the tape: `τ |r|² / trace`, floored.
fn baggins_t_tape(tape: &Tape, resid_sq: Var, traces: &[f64], tau: f64) -> Result<(Var, usize)> {
    let inv = tape.constant(Tensor::vector(traces.iter().map(|t| tau / t).collect()));
    let raw = tape.mul(resid_sq, inv)?;
    let floored = tape.value(raw).data().iter().filter(|t| !(**t >= BAGGINS_T_FLOOR)).count();
    Ok((tape.clamp_min(raw, BAGGINS_T_FLOOR), floored))
}

/// Batch-mean expected log likelihood for one draw of `z`.
/// Returns the scalar, per-example variance summaries and floor hits.
pub fn loglik_batch_mean(
    tape: &Tape,
    x: Var,
    dec: Decoded,
    spec: &LikelihoodSpec,
    traces: &[f64],
) -> Result<(Var, Vec<f64>, usize)> {
    let (b, m) = tape.value(x).dims2();
    if spec.needs_decoder_std() != dec.std.is_some() {
        return Err(contract(format!(
            "likelihood {:?} {} a decoder variance head",
            spec.kind,
            if spec.needs_decoder_std() { "needs" } else { "must not have" }
        )));
    }
    let bf = b as f64;
    let mf = m as f64;
    match spec.kind {
        LikelihoodKind::BernoulliLogits => {
            let xl = tape.mul(x, dec.mean)?;
            let ll = tape.sub(xl, tape.softplus(dec.mean))?;
            Ok((tape.scale(tape.sum(ll), 1.0 / bf), Vec::new(), 0))
        }
        LikelihoodKind::GaussianFixed => {
            let t = spec.fixed_var.unwrap_or(1.0);
            let r = tape.sub(x, dec.mean)?;
            let sq = tape.scale(tape.sum(tape.square(r)), -0.5 / (t * bf));
            let ll = tape.add_scalar(sq, -0.5 * mf * (2.0 * PI * t).ln());
            Ok((ll, vec![t; b], 0))
        }
        LikelihoodKind::GaussianLearned => {
            let std = dec.std.expect("checked above");
            let var = tape.clamp_min(tape.square(std), MIN_VARIANCE);
            let r = tape.sub(x, dec.mean)?;
            let maha = tape.div(tape.square(r), var)?;
            let inner = tape.add(tape.ln(var), maha)?;
            let ll = tape.add_scalar(tape.scale(tape.sum(inner), -0.5 / bf), -0.5 * mf * (2.0 * PI).ln());
            let medians = {
                let v = tape.value(var);
                (0..b).map(|i| median(v.row(i))).collect()
            };
            Ok((ll, medians, 0))
        }
        LikelihoodKind::GaussianBaggins => {
            let tau = spec.tau.unwrap_or(1.0);
            let r = tape.sub(x, dec.mean)?;
            let rsq = tape.sum_cols(tape.square(r));
            let (t, floored) = baggins_t_tape(tape, rsq, traces, tau)?;
            let log_t = tape.scale(tape.sum(tape.ln(t)), mf);
            let maha = tape.sum(tape.div(rsq, t)?);
            let total = tape.add(log_t, maha)?;
            let ll = tape.add_scalar(tape.scale(total, -0.5 / bf), -0.5 * mf * (2.0 * PI).ln());
            let ts = tape.value(t).data().to_vec();
            Ok((ll, ts, floored))
        }
    }
}

/// `-½ E_B[log det(2πT)]` for one draw, the sample-dependent part of the
/// fused BILBO+BAGGINS bound.
fn fused_baggins_tail(tape: &Tape, x: Var, dec: Decoded, traces: &[f64], tau: f64) -> Result<(Var, Vec<f64>, usize)> {
    if dec.std.is_some() {
        return Err(contract("BAGGINS replaces the decoder variance head"));
    }
    let (b, m) = tape.value(x).dims2();
    let r = tape.sub(x, dec.mean)?;
    let rsq = tape.sum_cols(tape.square(r));
    let (t, floored) = baggins_t_tape(tape, rsq, traces, tau)?;
    let log_t = tape.scale(tape.sum(tape.ln(t)), -0.5 * m as f64 / b as f64);
    let tail = tape.add_scalar(log_t, -0.5 * m as f64 * (2.0 * PI).ln());
    let ts = tape.value(t).data().to_vec();
    Ok((tail, ts, floored))
}

/// Single-example ELBO with explicit posterior and prior.
pub fn elbo(
    x: &[f64],
    q: &DiagGaussian,
    prior_var: &[f64],
    decode: &dyn Fn(&Tape, Var) -> Result<Decoded>,
    spec: &ObjectiveSpec,
    rng: &mut Rng,
) -> Result<f64> {
    if spec.mc_samples == 0 {
        return Err(contract("mc_samples must be at least 1"));
    }
    spec.likelihood.validate()?;
    let kl = crate::gaussian::kl_to_prior(q, prior_var)?;
    let n = q.dim();
    let tape = Tape::new();
    let xv = tape.constant(Tensor::matrix(1, x.len(), x.to_vec())?);
    let mu = tape.constant(Tensor::matrix(1, n, q.mean().to_vec())?);
    let var = tape.constant(Tensor::vector(q.var().to_vec()));
    let trace: f64 = prior_var.iter().zip(q.var()).map(|(s, v)| s / v).sum();
    let mut ll = 0.0;
    for _ in 0..spec.mc_samples {
        let eps = Tensor::new(&[1, n], rng.normal_vec(n))?;
        let z = reparam_tape(&tape, mu, var, eps)?;
        let dec = decode(&tape, z)?;
        let (l, _, _) = loglik_batch_mean(&tape, xv, dec, &spec.likelihood, &[trace])?;
        ll += tape.scalar(l);
    }
    Ok(ll / spec.mc_samples as f64 - kl)
}

fn constant_batch(
    batch_x: &Tensor,
    batch_mu: &Tensor,
    spec: &ObjectiveSpec,
    decode: &dyn Fn(&Tape, Var) -> Result<Decoded>,
    rng: &mut Rng,
) -> Result<f64> {
    if batch_x.rows() != batch_mu.rows() {
        return Err(Error::Shape {
            op: "bilbo",
            lhs: batch_x.shape().to_vec(),
            rhs: batch_mu.shape().to_vec(),
        });
    }
    let tape = Tape::new();
    let x = tape.constant(batch_x.clone());
    let mu = tape.constant(batch_mu.clone());
    let out = batch_objective(&tape, spec, x, Encoded { mu, var: None }, decode, rng)?;
    Ok(out.value)
}

/// BILBO on a batch of data and encoder means.
pub fn bilbo(
    batch_x: &Tensor,
    batch_mu: &Tensor,
    sigma_const: &[f64],
    decode: &dyn Fn(&Tape, Var) -> Result<Decoded>,
    likelihood: LikelihoodSpec,
    mc_samples: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let mut spec = ObjectiveSpec::new(ObjectiveMode::Bilbo, sigma_const.to_vec(), likelihood);
    spec.mc_samples = mc_samples;
    constant_batch(batch_x, batch_mu, &spec, decode, rng)
}

/// Fused BILBO+BAGGINS bound.
pub fn bilbo_baggins(
    batch_x: &Tensor,
    batch_mu: &Tensor,
    sigma_const: &[f64],
    decode: &dyn Fn(&Tape, Var) -> Result<Decoded>,
    tau: f64,
    mc_samples: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let mut spec = ObjectiveSpec::new(ObjectiveMode::BilboBaggins, sigma_const.to_vec(), LikelihoodSpec::baggins(tau));
    spec.mc_samples = mc_samples;
    constant_batch(batch_x, batch_mu, &spec, decode, rng)
}

/// Evaluates `spec` for `model` on a batch. Builds its own tape.
pub fn objective_value(batch_x: &Tensor, model: &dyn VaeModel, spec: &ObjectiveSpec, rng: &mut Rng) -> Result<f64> {
    let tape = Tape::new();
    let x = tape.constant(batch_x.clone());
    let enc = model.encode(&tape, x)?;
    let decode = |t: &Tape, z: Var| model.decode(t, z);
    Ok(batch_objective(&tape, spec, x, enc, &decode, rng)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd;
    use crate::gaussian::kl_to_prior;

    fn linear_decoder(w: Tensor) -> impl Fn(&Tape, Var) -> Result<Decoded> {
        move |tape: &Tape, z: Var| {
            let wv = tape.constant(w.clone());
            Ok(Decoded {
                mean: tape.matmul(z, wv)?,
                std: None,
            })
        }
    }

    fn random_tensor(rng: &mut Rng, r: usize, c: usize) -> Tensor {
        Tensor::new(&[r, c], rng.normal_vec(r * c)).unwrap()
    }

    #[test]
    fn mode_parsing() {
        for m in ObjectiveMode::ALL {
            assert_eq!(m.as_str().parse::<ObjectiveMode>().unwrap(), m);
        }
        assert!(matches!("elbo".parse::<ObjectiveMode>(), Err(Error::Contract(_))));
    }

    #[test]
    fn spec_validation() {
        let mut s = ObjectiveSpec::new(ObjectiveMode::BilboBaggins, vec![1.0], LikelihoodSpec::gaussian_fixed(1.0));
        assert!(s.validate().is_err());
        s.likelihood = LikelihoodSpec::baggins(0.2);
        assert!(s.validate().is_ok());
        s.sigma_const = vec![0.0];
        assert!(s.validate().is_err());
        s.sigma_const = vec![1.0];
        s.mc_samples = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn floating_prior_examples() {
        let z = floating_prior(&[0.0, 0.0], &[0.3, 2.0]).unwrap();
        assert_eq!(z.s2, vec![0.3, 2.0]);
        let mu = Tensor::from_rows(&[&[1.0, 0.0], &[-1.0, 0.0]]).unwrap();
        let m = batch_second_moment(&mu);
        assert_eq!(m, vec![1.0, 0.0]);
        assert_eq!(floating_prior(&m, &[1.0, 1.0]).unwrap().s2, vec![2.0, 1.0]);
        let scaled = batch_second_moment(&mu.map(|v| 3.0 * v));
        assert_eq!(scaled, vec![9.0, 0.0]);
        assert!(floating_prior(&[1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn optimal_prior_examples() {
        let std = vec![DiagGaussian::standard(3); 4];
        assert_eq!(optimal_prior(&std).unwrap(), vec![1.0; 3]);
        let a = DiagGaussian::new(vec![1.0], vec![0.5]).unwrap();
        let b = DiagGaussian::new(vec![-1.0], vec![0.5]).unwrap();
        assert_eq!(optimal_prior(&[a.clone(), b.clone()]).unwrap(), vec![1.5]);
        assert_eq!(optimal_prior(&[b, a]).unwrap(), vec![1.5]);
        assert!(matches!(optimal_prior(&[]), Err(Error::Contract(_))));
    }

    #[test]
    fn baggins_variance_examples() {
        let t = baggins_variance(&[2.0, 0.0], &[0.0, 0.0], &[1.0, 1.0], &[2.0, 2.0], 1.0).unwrap();
        assert_eq!(t, BagginsT { t: 1.0, floored: false });
        let z = baggins_variance(&[0.5, 0.5], &[0.5, 0.5], &[1.0, 1.0], &[2.0, 2.0], 1.0).unwrap();
        assert_eq!(z, BagginsT { t: 1e-12, floored: true });
        let x = [0.3, -1.2, 0.7];
        let nu = [0.1, 0.4, -0.2];
        let base = baggins_variance(&x, &nu, &[0.5], &[1.7], 0.2).unwrap().t;
        for lambda in [0.5, 2.0, 10.0] {
            let xs: Vec<f64> = x.iter().map(|v| v * lambda).collect();
            let ns: Vec<f64> = nu.iter().map(|v| v * lambda).collect();
            let t = baggins_variance(&xs, &ns, &[0.5], &[1.7], 0.2).unwrap().t;
            assert!((t / (lambda * lambda) - base).abs() < 1e-14 * base.max(1.0));
        }
        assert!(baggins_variance(&x, &nu, &[0.5], &[1.7], 0.0).is_err());
    }

    #[test]
    fn elbo_at_prior_with_perfect_decoder() {
        let x = [0.4, -1.3];
        let decode = |tape: &Tape, z: Var| {
            let zero = tape.scale(tape.matmul(z, tape.constant(Tensor::zeros(&[2, 2])))?, 1.0);
            let shift = tape.constant(Tensor::vector(x.to_vec()));
            Ok(Decoded {
                mean: tape.add_row(zero, shift)?,
                std: None,
            })
        };
        let spec = ObjectiveSpec::new(ObjectiveMode::ElboLearnedSigma, vec![], LikelihoodSpec::gaussian_fixed(1.0));
        let v = elbo(&x, &DiagGaussian::standard(2), &[1.0, 1.0], &decode, &spec, &mut Rng::new(1)).unwrap();
        assert!((v + (2.0 * PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn bilbo_prior_term_examples() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1]));
        let mu = tape.constant(Tensor::matrix(1, 1, vec![3f64.sqrt()]).unwrap());
        let spec = ObjectiveSpec::new(ObjectiveMode::Bilbo, vec![1.0], LikelihoodSpec::gaussian_fixed(1.0));
        let dec = linear_decoder(Tensor::ones(&[1, 1]));
        let out = batch_objective(&tape, &spec, x, Encoded { mu, var: None }, &dec, &mut Rng::new(0)).unwrap();
        assert!((out.prior_term + 0.5 * 4f64.ln()).abs() < 1e-14);

        let tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[3, 2]));
        let mu = tape.constant(Tensor::zeros(&[3, 2]));
        let dec = linear_decoder(Tensor::ones(&[2, 2]));
        let out = batch_objective(&tape, &spec_with(ObjectiveMode::Bilbo, 2), x, Encoded { mu, var: None }, &dec, &mut Rng::new(0)).unwrap();
        assert_eq!(out.prior_term, 0.0);
    }

    fn spec_with(mode: ObjectiveMode, n: usize) -> ObjectiveSpec {
        let lik = if mode == ObjectiveMode::BilboBaggins {
            LikelihoodSpec::baggins(0.2)
        } else {
            LikelihoodSpec::gaussian_fixed(1.0)
        };
        ObjectiveSpec::new(mode, vec![0.3; n], lik)
    }

    #[test]
    fn prior_term_is_sum_of_log_ratios() {
        let mut rng = Rng::new(5);
        let mu = random_tensor(&mut rng, 7, 3);
        let sigma = [0.2, 1.5, 0.7];
        let tape = Tape::new();
        let m_b = batch_second_moment(&mu);
        let muv = tape.constant(mu);
        let x = tape.constant(Tensor::zeros(&[7, 2]));
        let mut spec = spec_with(ObjectiveMode::Bilbo, 3);
        spec.sigma_const = sigma.to_vec();
        let dec = linear_decoder(Tensor::ones(&[3, 2]));
        let out = batch_objective(&tape, &spec, x, Encoded { mu: muv, var: None }, &dec, &mut rng).unwrap();
        let expect: f64 = -0.5 * m_b.iter().zip(&sigma).map(|(m, s)| (1.0 + m / s).ln()).sum::<f64>();
        assert!((out.prior_term - expect).abs() < 1e-14);
    }

    #[test]
    fn const_sigma_elbo_matches_bilbo() {
        let mut rng = Rng::new(11);
        let x = random_tensor(&mut rng, 6, 4);
        let mu = random_tensor(&mut rng, 6, 2);
        let w = random_tensor(&mut rng, 2, 4);
        let dec = linear_decoder(w);
        let run = |mode| {
            let tape = Tape::new();
            let xv = tape.constant(x.clone());
            let muv = tape.constant(mu.clone());
            batch_objective(&tape, &spec_with(mode, 2), xv, Encoded { mu: muv, var: None }, &dec, &mut Rng::new(3))
                .unwrap()
                .value
        };
        let a = run(ObjectiveMode::ElboConstSigma);
        let b = run(ObjectiveMode::Bilbo);
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn single_example_bilbo_equals_elbo_with_floating_prior() {
        let mut rng = Rng::new(2);
        let x = random_tensor(&mut rng, 1, 3);
        let mu = random_tensor(&mut rng, 1, 2);
        let w = random_tensor(&mut rng, 2, 3);
        let dec = linear_decoder(w);
        let sigma = [0.4, 0.9];
        let lik = LikelihoodSpec::gaussian_fixed(1.0);
        let b = bilbo(&x, &mu, &sigma, &dec, lik.clone(), 50, &mut Rng::new(9)).unwrap();
        let prior: Vec<f64> = mu.row(0).iter().zip(&sigma).map(|(m, s)| m * m + s).collect();
        let q = DiagGaussian::new(mu.row(0).to_vec(), sigma.to_vec()).unwrap();
        let mut spec = ObjectiveSpec::new(ObjectiveMode::ElboConstSigma, sigma.to_vec(), lik);
        spec.mc_samples = 50;
        let e = elbo(x.row(0), &q, &prior, &dec, &spec, &mut Rng::new(9)).unwrap();
        assert!((b - e).abs() < 1e-12, "{b} vs {e}");
    }

    #[test]
    fn fused_baggins_equals_unfused() {
        let mut rng = Rng::new(21);
        for trial in 0..20 {
            let b = 2 + trial % 5;
            let x = random_tensor(&mut rng, b, 5);
            let mu = random_tensor(&mut rng, b, 3);
            let w = random_tensor(&mut rng, 3, 5);
            let sigma: Vec<f64> = (0..3).map(|_| rng.uniform_range(0.1, 2.0)).collect();
            let tau = rng.uniform_range(0.1, 5.0);
            let dec = linear_decoder(w);
            let seed = rng.next_u64();
            let fused = bilbo_baggins(&x, &mu, &sigma, &dec, tau, 2, &mut Rng::new(seed)).unwrap();
            let unfused = bilbo(&x, &mu, &sigma, &dec, LikelihoodSpec::baggins(tau), 2, &mut Rng::new(seed)).unwrap();
            assert!((fused - unfused).abs() < 1e-10, "{fused} vs {unfused}");
        }
    }

    #[test]
    fn baggins_at_zero_means() {
        // Σ = I, M_B = 0: the bound is -n/(2τ) - ½ E log det(2πT)
        let mut rng = Rng::new(4);
        let x = random_tensor(&mut rng, 4, 3);
        let mu = Tensor::zeros(&[4, 2]);
        let w = random_tensor(&mut rng, 2, 3);
        let dec = linear_decoder(w);
        let tape = Tape::new();
        let xv = tape.constant(x);
        let muv = tape.constant(mu);
        let mut spec = spec_with(ObjectiveMode::BilboBaggins, 2);
        spec.sigma_const = vec![1.0, 1.0];
        let out = batch_objective(&tape, &spec, xv, Encoded { mu: muv, var: None }, &dec, &mut rng).unwrap();
        assert_eq!(out.prior_term, 0.0);
        let tail: f64 = out.t_values.iter().map(|t| -1.5 * (2.0 * PI * t).ln()).sum::<f64>() / 4.0;
        assert!((out.loglik_term - (tail - 1.0 / 0.2)).abs() < 1e-10);
    }

    #[test]
    fn baggins_residual_term_shifts_with_data_scale() {
        let mut rng = Rng::new(8);
        let x = random_tensor(&mut rng, 5, 4);
        let mu = random_tensor(&mut rng, 5, 2);
        let w = random_tensor(&mut rng, 2, 4);
        let base = bilbo_baggins(&x, &mu, &[0.5, 0.5], &linear_decoder(w.clone()), 0.2, 1, &mut Rng::new(1)).unwrap();
        for lambda in [0.5, 2.0] {
            let xs = x.map(|v| v * lambda);
            let ws = w.map(|v| v * lambda);
            let v = bilbo_baggins(&xs, &mu, &[0.5, 0.5], &linear_decoder(ws), 0.2, 1, &mut Rng::new(1)).unwrap();
            let shift = -0.5 * 4.0 * (lambda * lambda).ln();
            assert!((v - base - shift).abs() < 1e-10);
        }
    }

    #[test]
    fn learned_sigma_kl_matches_plain() {
        let mut rng = Rng::new(6);
        let mu = random_tensor(&mut rng, 3, 2);
        let var = Tensor::new(&[3, 2], (0..6).map(|_| rng.uniform_range(0.1, 2.0)).collect()).unwrap();
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[3, 2]));
        let muv = tape.constant(mu.clone());
        let vv = tape.constant(var.clone());
        let spec = ObjectiveSpec::new(ObjectiveMode::ElboLearnedSigma, vec![], LikelihoodSpec::gaussian_fixed(1.0));
        let dec = linear_decoder(Tensor::identity(2));
        let out = batch_objective(&tape, &spec, x, Encoded { mu: muv, var: Some(vv) }, &dec, &mut rng).unwrap();
        let expect: f64 = (0..3)
            .map(|i| kl_to_prior(&DiagGaussian::new(mu.row(i).to_vec(), var.row(i).to_vec()).unwrap(), &[1.0, 1.0]).unwrap())
            .sum::<f64>()
            / 3.0;
        assert!((out.prior_term + expect).abs() < 1e-13);
        assert!(out.value.is_finite());
    }

    #[test]
    fn mode_mismatches_are_contract_errors() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 2]));
        let mu = tape.constant(Tensor::zeros(&[2, 2]));
        let dec = linear_decoder(Tensor::identity(2));
        let learned = ObjectiveSpec::new(ObjectiveMode::ElboLearnedSigma, vec![], LikelihoodSpec::gaussian_fixed(1.0));
        let r = batch_objective(&tape, &learned, x, Encoded { mu, var: None }, &dec, &mut Rng::new(0));
        assert!(matches!(r, Err(Error::Contract(_))));
        let r = batch_objective(&tape, &spec_with(ObjectiveMode::Bilbo, 2), x, Encoded { mu, var: Some(mu) }, &dec, &mut Rng::new(0));
        assert!(matches!(r, Err(Error::Contract(_))));
        let lik = ObjectiveSpec::new(ObjectiveMode::Bilbo, vec![1.0; 2], LikelihoodSpec::gaussian_learned());
        let r = batch_objective(&tape, &lik, x, Encoded { mu, var: None }, &dec, &mut Rng::new(0));
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    /// Tape gradient w.r.t. the encoder means and decoder weights against
    /// central differences with the noise frozen by reseeding.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(31);
        let (b, n, m) = (4, 2, 3);
        let x = random_tensor(&mut rng, b, m);
        let mu0 = random_tensor(&mut rng, b, n);
        let w0 = random_tensor(&mut rng, n, m);
        for mode in ObjectiveMode::ALL {
            let mut spec = spec_with(mode, n);
            let var0 = Tensor::full(&[b, n], 0.4);
            if mode == ObjectiveMode::ElboLearnedSigma {
                spec.likelihood = LikelihoodSpec::gaussian_fixed(0.7);
            }
            let eval = |params: &[f64], grad: bool| -> (f64, Vec<f64>) {
                let tape = Tape::new();
                let mu = tape.leaf(Tensor::new(&[b, n], params[..b * n].to_vec()).unwrap());
                let w = tape.leaf(Tensor::new(&[n, m], params[b * n..].to_vec()).unwrap());
                let xv = tape.constant(x.clone());
                let var = (mode == ObjectiveMode::ElboLearnedSigma).then(|| tape.constant(var0.clone()));
                let dec = move |t: &Tape, z: Var| {
                    Ok(Decoded {
                        mean: t.matmul(z, w)?,
                        std: None,
                    })
                };
                let out = batch_objective(&tape, &spec, xv, Encoded { mu, var }, &dec, &mut Rng::new(77)).unwrap();
                let mut g = Vec::new();
                if grad {
                    let gs = tape.backward(out.bound).unwrap();
                    g.extend_from_slice(gs.wrt(mu).data());
                    g.extend_from_slice(gs.wrt(w).data());
                }
                (out.value, g)
            };
            let mut p = mu0.data().to_vec();
            p.extend_from_slice(w0.data());
            let (_, g) = eval(&p, true);
            let fdg = fd::gradient(|q| eval(q, false).0, &p, 1e-5);
            // BAGGINS holds tr(Σ⁻¹S²) fixed, so only the decoder path is comparable
            let skip = if mode == ObjectiveMode::BilboBaggins { b * n } else { 0 };
            for (a, e) in g.iter().zip(&fdg).skip(skip) {
                assert!(fd::rel_err(*a, *e, 1e-6) < 1e-3, "{mode}: tape {a} fd {e}");
            }
        }
    }

    #[test]
    fn mc_average_matches_many_sample_estimate() {
        let mut rng = Rng::new(12);
        let x = random_tensor(&mut rng, 1, 2);
        let mu = random_tensor(&mut rng, 1, 2);
        let w = random_tensor(&mut rng, 2, 2);
        let dec = linear_decoder(w);
        let q = DiagGaussian::new(mu.row(0).to_vec(), vec![0.5, 0.8]).unwrap();
        let mut spec = ObjectiveSpec::new(ObjectiveMode::ElboLearnedSigma, vec![], LikelihoodSpec::gaussian_fixed(1.0));
        let calls = 10_000;
        let mut singles = Vec::with_capacity(calls);
        let mut r = Rng::new(40);
        for _ in 0..calls {
            singles.push(elbo(x.row(0), &q, &[1.0, 1.0], &dec, &spec, &mut r).unwrap());
        }
        let mean = singles.iter().sum::<f64>() / calls as f64;
        let var = singles.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (calls - 1) as f64;
        spec.mc_samples = calls;
        let many = elbo(x.row(0), &q, &[1.0, 1.0], &dec, &spec, &mut Rng::new(41)).unwrap();
        let se = (2.0 * var / calls as f64).sqrt();
        assert!((many - mean).abs() < 3.0 * se, "{many} vs {mean} (se {se})");
    }
}
