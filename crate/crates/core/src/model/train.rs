use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[allow(unused_imports)]
use num_traits::Float;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::mlp::{Architecture, MlpVae, ModelSpec};
use crate::data::Dataset;
use crate::error::{contract, Error, Result};
use crate::gaussian::{kl_batch_mean, reparam_tape, LikelihoodKind, LikelihoodSpec, MIN_VARIANCE};
use crate::objectives::{batch_objective, batch_second_moment, loglik_batch_mean, ObjectiveSpec, VaeModel};
use crate::rng::{stream, Rng};
use crate::stats::median;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub objective: ObjectiveSpec,
    pub arch: Architecture,
    /// Log a metrics row every this many steps.
    pub eval_every: usize,
    /// Global gradient norm cap.
    pub clip_norm: f64,
}

impl TrainConfig {
    pub fn new(objective: ObjectiveSpec, arch: Architecture) -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 300,
            epochs: 1,
            seed: 0,
            objective,
            arch,
            eval_every: 1,
            clip_norm: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || self.epochs == 0 || self.eval_every == 0 {
            return Err(contract("batch_size >= 2, epochs >= 1 and eval_every >= 1 are required"));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(contract("learning_rate and clip_norm must be positive"));
        }
        self.objective.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub objective: f64,
    pub kl_term: f64,
    pub loglik_term: f64,
    #[serde(rename = "trS2")]
    pub tr_s2: f64,
    /// Median per-example likelihood variance (BAGGINS `t`, learned or
    /// fixed `T`); NaN for Bernoulli.
    pub baggins_t_median: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
    pub steps: usize,
    pub clip_events: usize,
    /// Variance entries held at the minimum-variance clamp.
    pub clamp_events: usize,
    pub floor_events: usize,
    pub skipped_steps: usize,
}

/// Trains a freshly initialized model.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(MlpVae, MetricsLog)> {
    config.validate()?;
    let spec = ModelSpec::for_objective(dataset.dim(), config.arch, &config.objective);
    let model = MlpVae::init(spec, &mut Rng::with_stream(config.seed, stream::INIT))?;
    train_model(model, dataset, config)
}

fn count_clamped(tape: &Tape, v: Option<Var>, floor: f64) -> usize {
    v.map_or(0, |v| tape.value(v).data().iter().filter(|x| **x <= floor).count())
}

/// Shuffled minibatch Adam on `-bound`. Two consecutive non-finite steps
/// halt with [`Error::Diverged`].
pub fn train_model(mut model: MlpVae, dataset: &Dataset, config: &TrainConfig) -> Result<(MlpVae, MetricsLog)> {
    config.validate()?;
    let obj = &config.objective;
    model.spec().check_objective(obj)?;
    if model.spec().data_dim != dataset.dim() {
        return Err(contract("model data_dim differs from the dataset"));
    }
    if !obj.mode.learns_sigma() {
        model.set_sigma_const(obj.sigma_const.clone())?;
    }
    let mut shuffle = Rng::with_stream(config.seed, stream::SHUFFLE);
    let mut noise = Rng::with_stream(config.seed, stream::NOISE);
    let adam = AdamConfig {
        lr: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(model.params());
    let mut log = MetricsLog::default();
    let mut bad = 0;
    for _ in 0..config.epochs {
        let order = shuffle.permutation(dataset.len());
        for batch in order.chunks(config.batch_size) {
            let step = log.steps;
            log.steps += 1;
            let xb = dataset.xs().select_rows(batch);
            let (row, grads) = {
                let tape = Tape::new();
                let bound = model.bind(&tape, true);
                let x = tape.constant(xb);
                let enc = bound.encode(&tape, x)?;
                log.clamp_events += count_clamped(&tape, enc.var, MIN_VARIANCE);
                let decode = |t: &Tape, z: Var| {
                    let d = bound.decode(t, z)?;
                    Ok(d)
                };
                let out = batch_objective(&tape, obj, x, enc, &decode, &mut noise)?;
                log.floor_events += out.floored;
                let row = MetricsRow {
                    step,
                    objective: out.value,
                    kl_term: -out.prior_term,
                    loglik_term: out.loglik_term,
                    tr_s2: out.tr_s2,
                    baggins_t_median: median(&out.t_values),
                };
                let grads: Option<Vec<Tensor>> = if out.value.is_finite() {
                    let g = tape.backward(tape.neg(out.bound))?;
                    let grads: Vec<Tensor> = bound.vars().iter().map(|v| g.wrt(*v)).collect();
                    grads.iter().all(Tensor::all_finite).then_some(grads)
                } else {
                    None
                };
                (row, grads)
            };
            let Some(mut grads) = grads else {
                bad += 1;
                log.skipped_steps += 1;
                if bad >= 2 {
                    return Err(Error::Diverged {
                        step,
                        detail: format!(
                            "non-finite loss or gradient on two consecutive steps; last objective {}, kl {}, loglik {}, trS2 {}",
                            row.objective, row.kl_term, row.loglik_term, row.tr_s2
                        ),
                    });
                }
                continue;
            };
            bad = 0;
            let norm = grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
            if norm > config.clip_norm {
                let s = config.clip_norm / norm;
                grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= s));
                log.clip_events += 1;
            }
            adam_step(model.params_mut(), &grads, &mut state, &adam)?;
            if step % config.eval_every == 0 {
                log.rows.push(row);
            }
        }
    }
    if !obj.mode.learns_sigma() {
        let m = dataset_second_moment(&model, dataset)?;
        let prior = m.iter().zip(&obj.sigma_const).map(|(m, s)| m + s).collect();
        model.set_prior_var(prior)?;
    }
    Ok((model, log))
}

const EVAL_CHUNK: usize = 500;

/// `E[μ ⊙ μ]` over the whole dataset.
pub fn dataset_second_moment(model: &MlpVae, dataset: &Dataset) -> Result<Vec<f64>> {
    let n = model.spec().arch.latent_dim;
    let mut acc = alloc::vec![0.0; n];
    let idx: Vec<usize> = (0..dataset.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (mu, _) = model.encode_batch(&dataset.xs().select_rows(chunk))?;
        let m = batch_second_moment(&mu);
        for (a, v) in acc.iter_mut().zip(m) {
            *a += v * chunk.len() as f64;
        }
    }
    Ok(acc.into_iter().map(|v| v / dataset.len() as f64).collect())
}

/// Mean per-example ELBO over `dataset` against the model's stored prior
/// (`N(0, I)` for learned-Σ models, `Σ + M` from the training set
/// otherwise), with `mc_samples` likelihood draws per example.
pub fn evaluate_bound(model: &MlpVae, dataset: &Dataset, objective: &ObjectiveSpec, mc_samples: usize, rng: &mut Rng) -> Result<f64> {
    objective.validate()?;
    model.spec().check_objective(objective)?;
    if mc_samples == 0 {
        return Err(contract("mc_samples must be at least 1"));
    }
    let n = model.spec().arch.latent_dim;
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let b = chunk.len();
        let tape = Tape::new();
        let bound = model.bind(&tape, false);
        let x = tape.constant(dataset.xs().select_rows(chunk));
        let enc = bound.encode(&tape, x)?;
        let var = match enc.var {
            Some(v) => v,
            None => tape.constant(Tensor::vector(objective.sigma_const.clone())),
        };
        let prior = tape.constant(Tensor::vector(model.prior_var().to_vec()));
        let kl = tape.scalar(kl_batch_mean(&tape, enc.mu, var, prior)?);
        let traces: Vec<f64> = {
            let v = tape.value(var);
            let row = |i: usize| if v.shape().len() == 1 { v.data() } else { v.row(i) };
            (0..b)
                .map(|i| model.prior_var().iter().zip(row(i)).map(|(s, v)| s / v).sum())
                .collect()
        };
        let mut ll = 0.0;
        for _ in 0..mc_samples {
            let eps = Tensor::new(&[b, n], rng.normal_vec(b * n))?;
            let z = reparam_tape(&tape, enc.mu, var, eps)?;
            let dec = bound.decode(&tape, z)?;
            let (l, _, _) = loglik_batch_mean(&tape, x, dec, &objective.likelihood, &traces)?;
            ll += tape.scalar(l);
        }
        total += b as f64 * (ll / mc_samples as f64 - kl);
    }
    Ok(total / dataset.len() as f64)
}

/// Decoder output mapped to data space: probabilities for Bernoulli
/// logits, unchanged otherwise.
pub fn data_space_mean(decoded: Tensor, likelihood: &LikelihoodSpec) -> Tensor {
    match likelihood.kind {
        LikelihoodKind::BernoulliLogits => decoded.map(crate::tape::sigmoid),
        _ => decoded,
    }
}

/// Root-mean-square error of the decoded mean at `μ(x)` against `x` over
/// all entries.
pub fn reconstruction_rmse(model: &MlpVae, dataset: &Dataset, likelihood: &LikelihoodSpec) -> Result<f64> {
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let mut sq = 0.0;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let xb = dataset.xs().select_rows(chunk);
        let (mu, _) = model.encode_batch(&xb)?;
        let rec = data_space_mean(model.decode_batch(&mu)?, likelihood);
        sq += rec.data().iter().zip(xb.data()).map(|(r, x)| (r - x) * (r - x)).sum::<f64>();
    }
    Ok((sq / (dataset.len() * dataset.dim()) as f64).sqrt())
}
