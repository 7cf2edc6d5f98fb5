//! The identity-verification suite.
//!
//! Every check compares a closed form against an independent computation
//! (finite differences, naive summation, Monte Carlo or an analytic
//! marginal) and reports the worst or median discrepancy against a fixed
//! tolerance.

use std::fmt::Write as _;
use std::time::Instant;

use bilbo_core::data::{gen_synthetic, ppca_log_evidence, SyntheticSpec};
use bilbo_core::fd;
use bilbo_core::model::{evaluate_bound, train, train_model, Architecture, TrainConfig};
use bilbo_core::objectives::{bilbo, bilbo_baggins, Decoded};
use bilbo_core::rng::stream;
use bilbo_core::theory::{
    constant_sigma_penalty, constant_sigma_penalty_full, elbo_evidence_gap, elbo_evidence_gap_full, information_matrix,
    mc_gradient_identities, mean_gap_at_shared_sigma, optimal_decoder, optimal_decoder_jacobian, penalty_remainder_bound,
    random_spd, spd_log_det, stationarity_residuals, trace_log_analytic, trace_log_min, HessianStats, QuadraticDecoder,
    TheoryDataset, TraceLogConfig,
};
use bilbo_core::{DiagGaussian, LikelihoodSpec, ObjectiveMode, ObjectiveSpec, Rng, Tape, Tensor, Var};
use nalgebra::{DMatrix, DVector};

use crate::error::{KitError, KitResult};

pub const CHECKS: [&str; 8] = [
    "decoder-oracle",
    "decoder-jacobian",
    "trace-log",
    "gap",
    "penalty",
    "mc-identities",
    "fused-baggins",
    "ppca-stationarity",
];

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOptions {
    pub only: Option<String>,
    /// Fixes the latent (or matrix) dimension of the randomized checks.
    pub dim: Option<usize>,
    /// Relative fault injected into the analytic decoder Jacobian.
    pub perturb_jacobian: f64,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            only: None,
            dim: None,
            perturb_jacobian: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub check: &'static str,
    pub metric: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub seconds: f64,
}

impl CheckOutcome {
    /// Passes when `measured < tolerance`.
    fn below(check: &'static str, metric: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self {
            check,
            metric: metric.into(),
            measured,
            tolerance,
            passed: measured < tolerance,
            seconds: 0.0,
        }
    }

    /// Passes when `measured <= tolerance`.
    fn at_most(check: &'static str, metric: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self {
            passed: measured <= tolerance,
            ..Self::below(check, metric, measured, tolerance)
        }
    }
}

pub fn run_verify(opts: &VerifyOptions) -> KitResult<Vec<CheckOutcome>> {
    if let Some(only) = &opts.only {
        if !CHECKS.contains(&only.as_str()) {
            return Err(KitError::usage(format!("unknown check `{only}`; expected one of {}", CHECKS.join(", "))));
        }
    }
    if opts.dim == Some(0) {
        return Err(KitError::usage("--dim must be at least 1"));
    }
    if !opts.perturb_jacobian.is_finite() {
        return Err(KitError::usage("--perturb-jacobian must be finite"));
    }
    let mut out = Vec::new();
    for (k, name) in CHECKS.iter().enumerate() {
        if opts.only.as_deref().is_some_and(|o| o != *name) {
            continue;
        }
        let mut rng = Rng::with_stream(opts.seed, 100 + k as u64);
        let start = Instant::now();
        let mut rows = match *name {
            "decoder-oracle" => decoder_oracle(opts, &mut rng)?,
            "decoder-jacobian" => decoder_jacobian(opts, &mut rng)?,
            "trace-log" => trace_log(opts, &mut rng)?,
            "gap" => gap(opts, &mut rng)?,
            "penalty" => penalty(opts, &mut rng)?,
            "mc-identities" => identities(opts, &mut rng)?,
            "fused-baggins" => fused_baggins(&mut rng)?,
            "ppca-stationarity" => ppca_stationarity(opts.seed)?,
            _ => unreachable!(),
        };
        let secs = start.elapsed().as_secs_f64();
        rows.iter_mut().for_each(|r| r.seconds = secs);
        out.extend(rows);
    }
    Ok(out)
}

pub fn all_passed(rows: &[CheckOutcome]) -> bool {
    rows.iter().all(|r| r.passed)
}

pub fn render_table(rows: &[CheckOutcome]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<18} {:<40} {:>12} {:>10} {:>7}  result", "check", "metric", "measured", "tolerance", "secs");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<18} {:<40} {:>12.3e} {:>10.1e} {:>7.2}  {}",
            r.check,
            r.metric,
            r.measured,
            r.tolerance,
            r.seconds,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    s
}

fn dim_or(opts: &VerifyOptions, rng: &mut Rng, max: usize) -> usize {
    opts.dim.unwrap_or_else(|| 1 + rng.below(max))
}

fn random_theory_dataset(rng: &mut Rng, count: usize, n: usize, m: usize) -> KitResult<TheoryDataset> {
    let xs = DMatrix::from_fn(count, m, |_, _| rng.normal());
    let posts = (0..count)
        .map(|_| {
            let mean = rng.normal_vec(n);
            let var = (0..n).map(|_| rng.uniform_range(0.2, 1.5)).collect();
            DiagGaussian::new(mean, var)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let prior = (0..n).map(|_| rng.uniform_range(0.5, 2.0)).collect();
    Ok(TheoryDataset::new(xs, posts, prior)?)
}

/// A probe near one of the islands, where the weights are not degenerate.
fn probe_near(rng: &mut Rng, ds: &TheoryDataset) -> Vec<f64> {
    let q = &ds.posteriors()[rng.below(ds.len())];
    q.mean().iter().zip(q.var()).map(|(m, v)| m + 0.7 * v.sqrt() * rng.normal()).collect()
}

fn decoder_oracle(opts: &VerifyOptions, rng: &mut Rng) -> KitResult<Vec<CheckOutcome>> {
    let mut worst = 0.0f64;
    let mut unflagged = 0usize;
    for _ in 0..100 {
        let count = 1 + rng.below(10);
        let n = dim_or(opts, rng, 3);
        let m = 1 + rng.below(4);
        let ds = random_theory_dataset(rng, count, n, m)?;
        let z = probe_near(rng, &ds);
        let mut num = DVector::zeros(m);
        let mut den = 0.0;
        for (i, q) in ds.posteriors().iter().enumerate() {
            let w: f64 = z
                .iter()
                .zip(q.mean())
                .zip(q.var())
                .map(|((z, mu), v)| (-(z - mu) * (z - mu) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt())
                .product();
            num += ds.xs().row(i).transpose() * w;
            den += w;
        }
        let naive = num / den;
        let got = optimal_decoder(&z, &ds)?.value;
        worst = worst.max((got - &naive).amax() / naive.amax().max(1.0));
        let far: Vec<f64> = (0..n).map(|k| if k == 0 { 1e4 } else { 0.0 }).collect();
        if !optimal_decoder(&far, &ds)?.extrapolated {
            unflagged += 1;
        }
    }
    Ok(vec![
        CheckOutcome::below("decoder-oracle", "max rel err vs naive weights (100)", worst, 1e-10),
        CheckOutcome::at_most("decoder-oracle", "far probes not flagged (100)", unflagged as f64, 0.0),
    ])
}

fn decoder_jacobian(opts: &VerifyOptions, rng: &mut Rng) -> KitResult<Vec<CheckOutcome>> {
    let mut errs = Vec::with_capacity(100);
    for _ in 0..100 {
        let count = 1 + rng.below(10);
        let n = dim_or(opts, rng, 3);
        let m = 1 + rng.below(4);
        let ds = random_theory_dataset(rng, count, n, m)?;
        let z = probe_near(rng, &ds);
        let analytic = optimal_decoder_jacobian(&z, &ds)?.value * (1.0 + opts.perturb_jacobian);
        let numeric = fd::jacobian(
            |z| optimal_decoder(z, &ds).map(|d| d.value.as_slice().to_vec()).unwrap_or_else(|_| vec![f64::NAN; m]),
            &z,
            1e-5,
        );
        errs.push((&analytic - &numeric).norm() / numeric.norm().max(1e-12));
    }
    let med = bilbo_core::stats::median(&errs);
    Ok(vec![CheckOutcome::below(
        "decoder-jacobian",
        "median rel err vs finite diff (100)",
        med,
        1e-5,
    )])
}

fn trace_log(opts: &VerifyOptions, rng: &mut Rng) -> KitResult<Vec<CheckOutcome>> {
    let (mut analytic_err, mut sgd_err) = (0.0f64, 0.0f64);
    let cfg = TraceLogConfig::default();
    for _ in 0..20 {
        let n = dim_or(opts, rng, 4);
        let a = random_spd(rng, n, 0.2, 5.0);
        let log_det = spd_log_det(&a)?;
        let (_, exact) = trace_log_analytic(&a)?;
        analytic_err = analytic_err.max((exact - log_det).abs());
        let found = trace_log_min(&a, &cfg, rng)?;
        sgd_err = sgd_err.max(found.value - log_det);
    }
    Ok(vec![
        CheckOutcome::below("trace-log", "max |f(A^-1) - log det A| (20)", analytic_err, 1e-10),
        CheckOutcome::below("trace-log", "max SGD excess over log det A (20)", sgd_err, 1e-3),
    ])
}

fn random_prior_and_jacobian(opts: &VerifyOptions, rng: &mut Rng) -> (Vec<f64>, DMatrix<f64>) {
    let n = dim_or(opts, rng, 3);
    let m = 1 + rng.below(4);
    let prior = (0..n).map(|_| rng.uniform_range(0.3, 3.0)).collect();
    let j = DMatrix::from_fn(m, n, |_, _| rng.normal());
    (prior, j)
}

fn gap(opts: &VerifyOptions, rng: &mut Rng) -> KitResult<Vec<CheckOutcome>> {
    let mut at_opt = 0.0f64;
    let mut min_full = f64::INFINITY;
    let mut min_diag = f64::INFINITY;
    for _ in 0..1000 {
        let (prior, j) = random_prior_and_jacobian(opts, rng);
        let n = prior.len();
        let h = information_matrix(&prior, &j);
        let sigma_opt = h.clone().try_inverse().ok_or_else(|| KitError::usage("singular information matrix"))?;
        at_opt = at_opt.max(elbo_evidence_gap_full(&prior, &j, &sigma_opt)?.abs());
        let sigma = random_spd(rng, n, 0.05, 3.0);
        min_full = min_full.min(elbo_evidence_gap_full(&prior, &j, &sigma)?);
        let diag: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.05, 3.0)).collect();
        min_diag = min_diag.min(elbo_evidence_gap(&prior, &j, &diag)?);
    }
    Ok(vec![
        CheckOutcome::below("gap", "max |gap| at inverse information (1000)", at_opt, 1e-10),
        CheckOutcome::at_most("gap", "-min gap, random full Sigma (1000)", -min_full, 0.0),
        CheckOutcome::at_most("gap", "-min gap, random diagonal Sigma (1000)", -min_diag, 0.0),
    ])
}

/// Largest coefficient of variation over the diagonal Hessian entries.
fn max_cv(stats: &HessianStats) -> f64 {
    let n = stats.dim();
    let count = stats.len() as f64;
    (0..n)
        .map(|k| {
            let vals: Vec<f64> = stats.matrices().iter().map(|h| h[(k, k)]).collect();
            let mean = vals.iter().sum::<f64>() / count;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
            var.sqrt() / mean.abs()
        })
        .fold(0.0, f64::max)
}

fn penalty(opts: &VerifyOptions, rng: &mut Rng) -> KitResult<Vec<CheckOutcome>> {
    let mut worst = [0.0f64; 2];
    let mut cv = 0.0f64;
    for _ in 0..20 {
        let (prior, base) = random_prior_and_jacobian(opts, rng);
        let spread = rng.uniform_range(0.005, 0.03);
        let js: Vec<DMatrix<f64>> = (0..50)
            .map(|_| &base + DMatrix::from_fn(base.nrows(), base.ncols(), |_, _| spread * rng.normal()))
            .collect();
        let stats = HessianStats::from_jacobians(&prior, &js)?;
        cv = cv.max(max_cv(&stats));
        for (slot, full) in [false, true].into_iter().enumerate() {
            let gap = mean_gap_at_shared_sigma(&stats, full)?;
            let pen = if full { constant_sigma_penalty_full(&stats)? } else { constant_sigma_penalty(&stats) };
            let bound = penalty_remainder_bound(&stats, full)?;
            worst[slot] = worst[slot].max((gap - pen).abs() / bound.max(f64::MIN_POSITIVE));
        }
    }
    Ok(vec![
        CheckOutcome::below("penalty", "max cv of ensemble Hessians (20)", cv, 0.1),
        CheckOutcome::at_most("penalty", "max |gap - penalty| / remainder, diag", worst[0], 1.0),
        CheckOutcome::at_most("penalty", "max |gap - penalty| / remainder, full", worst[1], 1.0),
    ])
}

fn identities(opts: &VerifyOptions, rng: &mut Rng) -> KitResult<Vec<CheckOutcome>> {
    let n = opts.dim.unwrap_or(2);
    let m = 3;
    let w = DMatrix::from_fn(m, n, |_, _| rng.normal());
    let b = DVector::from_vec(rng.normal_vec(m));
    let var = (0..n).map(|_| rng.uniform_range(0.3, 1.2)).collect();
    let q = DiagGaussian::new(rng.normal_vec(n), var)?;
    let x = rng.normal_vec(m);
    let report = mc_gradient_identities(&x, &q, &QuadraticDecoder::linear(w, b), 1_000_000, rng)?;
    Ok(vec![CheckOutcome::at_most(
        "mc-identities",
        format!("max |z| over {} gradient identities (1e6)", report.checks().count()),
        report.max_z(),
        3.0,
    )])
}

fn fused_baggins(rng: &mut Rng) -> KitResult<Vec<CheckOutcome>> {
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let b = 2 + trial % 7;
        let (n, m) = (1 + rng.below(3), 1 + rng.below(6));
        let x = Tensor::new(&[b, m], rng.normal_vec(b * m))?;
        let mu = Tensor::new(&[b, n], rng.normal_vec(b * n))?;
        let w = Tensor::new(&[n, m], rng.normal_vec(n * m))?;
        let sigma: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.1, 2.0)).collect();
        let tau = rng.uniform_range(0.1, 5.0);
        let decode = move |t: &Tape, z: Var| -> bilbo_core::Result<Decoded> {
            let wv = t.constant(w.clone());
            Ok(Decoded {
                mean: t.matmul(z, wv)?,
                std: None,
            })
        };
        let seed = rng.next_u64();
        let fused = bilbo_baggins(&x, &mu, &sigma, &decode, tau, 2, &mut Rng::new(seed))?;
        let unfused = bilbo(&x, &mu, &sigma, &decode, LikelihoodSpec::baggins(tau), 2, &mut Rng::new(seed))?;
        worst = worst.max((fused - unfused).abs() / fused.abs().max(1.0));
    }
    Ok(vec![CheckOutcome::below(
        "fused-baggins",
        "max |fused - unfused| value (100 batches)",
        worst,
        1e-10,
    )])
}

/// A trained linear VAE compared with the analytic pPCA optimum.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearStationarity {
    pub elbo: f64,
    pub ppca: f64,
    pub mean_residual_median: f64,
    pub precision_residual_median: f64,
    pub seconds: f64,
}

/// Trains a linear learned-Σ VAE (unit likelihood variance) on a 2-D
/// linear manifold in 5 dimensions with a step-size schedule of
/// 1e-2, 1e-3 then 1e-4 (20 epochs each).
pub fn linear_stationarity(seed: u64) -> KitResult<LinearStationarity> {
    let start = Instant::now();
    let ds = gen_synthetic(&SyntheticSpec::linear(vec![4.0, 1.0], 5, 1.0, 20_000, 11))?;
    let obj = ObjectiveSpec::new(ObjectiveMode::ElboLearnedSigma, vec![], LikelihoodSpec::gaussian_fixed(1.0));
    let mut cfg = TrainConfig::new(obj.clone(), Architecture::linear(2));
    cfg.epochs = 20;
    cfg.seed = seed;
    let mut model = None;
    for lr in [1e-2, 1e-3, 1e-4] {
        cfg.learning_rate = lr;
        model = Some(match model {
            None => train(&ds, &cfg)?.0,
            Some(m) => train_model(m, &ds, &cfg)?.0,
        });
    }
    let model = model.expect("three phases ran");
    let elbo = evaluate_bound(&model, &ds, &obj, 8, &mut Rng::with_stream(seed, stream::EVAL))?;
    let ppca = ppca_log_evidence(&ds, 1.0)?;
    let probe = ds.truncate(1000)?;
    let report = stationarity_residuals(&model, probe.xs(), &[1.0, 1.0], 1.0)?;
    Ok(LinearStationarity {
        elbo,
        ppca,
        mean_residual_median: report.mean_median(),
        precision_residual_median: report.precision_median(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn ppca_stationarity(seed: u64) -> KitResult<Vec<CheckOutcome>> {
    let r = linear_stationarity(seed)?;
    Ok(vec![
        CheckOutcome::below("ppca-stationarity", "|ELBO - pPCA log evidence| nats", (r.elbo - r.ppca).abs(), 0.05),
        CheckOutcome::below("ppca-stationarity", "median posterior-mean residual", r.mean_residual_median, 0.05),
        CheckOutcome::below(
            "ppca-stationarity",
            "median posterior-precision residual",
            r.precision_residual_median,
            0.05,
        ),
    ])
}
