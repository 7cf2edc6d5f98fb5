use bilbo_core::data::{gen_synthetic, Dataset, SyntheticSpec};
use bilbo_core::model::{evaluate_bound, train, Architecture, MlpVae, ModelSpec, TrainConfig};
use bilbo_core::objectives::{ObjectiveMode, ObjectiveSpec};
use bilbo_core::stats::{median, std_dev};
use bilbo_core::{LikelihoodSpec, Rng, Tensor};

fn small_arch(n: usize) -> Architecture {
    Architecture {
        hidden: 16,
        ..Architecture::mlp(n)
    }
}

fn bilbo_spec(n: usize) -> ObjectiveSpec {
    ObjectiveSpec::new(ObjectiveMode::Bilbo, vec![0.1; n], LikelihoodSpec::gaussian_fixed(1.0))
}

#[test]
fn one_epoch_logs_one_row_per_batch() {
    let ds = gen_synthetic(&SyntheticSpec::ring(4, 10, 1)).unwrap();
    let mut cfg = TrainConfig::new(bilbo_spec(2), small_arch(2));
    cfg.batch_size = 4;
    let (_, log) = train(&ds, &cfg).unwrap();
    assert_eq!(log.steps, 3);
    assert_eq!(log.rows.len(), 3);
    cfg.batch_size = 300;
    assert_eq!(train(&ds, &cfg).unwrap().1.rows.len(), 1);
}

#[test]
fn training_is_bit_reproducible() {
    let ds = gen_synthetic(&SyntheticSpec::ring(4, 200, 2)).unwrap();
    for mode in ObjectiveMode::ALL {
        let lik = match mode {
            ObjectiveMode::BilboBaggins => LikelihoodSpec::baggins(0.2),
            _ => LikelihoodSpec::gaussian_fixed(1.0),
        };
        let mut cfg = TrainConfig::new(ObjectiveSpec::new(mode, vec![0.1; 2], lik), small_arch(2));
        cfg.batch_size = 50;
        cfg.epochs = 2;
        cfg.seed = 9;
        let (a, la) = train(&ds, &cfg).unwrap();
        let (b, lb) = train(&ds, &cfg).unwrap();
        assert_eq!(a.flat_params(), b.flat_params(), "{mode}");
        let bits = |l: &bilbo_core::model::MetricsLog| l.rows.iter().map(|r| r.objective.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&la), bits(&lb));
    }
}

#[test]
fn bilbo_objective_improves_on_linear_data() {
    let ds = gen_synthetic(&SyntheticSpec::linear(vec![4.0, 1.0], 5, 0.5, 3000, 3)).unwrap();
    let mut cfg = TrainConfig::new(bilbo_spec(2), small_arch(2));
    cfg.batch_size = 100;
    cfg.epochs = 5;
    let (_, log) = train(&ds, &cfg).unwrap();
    let vals: Vec<f64> = log.rows.iter().map(|r| r.objective).collect();
    let k = vals.len();
    assert!(median(&vals[k - 10..]) > median(&vals[..10]));
}

#[test]
fn rejects_bad_config() {
    let ds = gen_synthetic(&SyntheticSpec::ring(4, 10, 1)).unwrap();
    let mut cfg = TrainConfig::new(bilbo_spec(2), small_arch(2));
    cfg.batch_size = 1;
    assert!(train(&ds, &cfg).is_err());
    cfg.batch_size = 4;
    cfg.objective.mode = ObjectiveMode::BilboBaggins;
    assert!(train(&ds, &cfg).is_err());
}

fn trained_ring_model(mode: ObjectiveMode) -> (MlpVae, Dataset, ObjectiveSpec) {
    let ds = gen_synthetic(&SyntheticSpec::ring(4, 300, 5)).unwrap();
    let obj = ObjectiveSpec::new(mode, vec![0.05; 2], LikelihoodSpec::gaussian_fixed(0.5));
    let mut cfg = TrainConfig::new(obj.clone(), small_arch(2));
    cfg.batch_size = 100;
    cfg.epochs = 3;
    let (m, _) = train(&ds, &cfg).unwrap();
    (m, ds, obj)
}

#[test]
fn evaluation_is_deterministic_and_converges_in_samples() {
    let (model, ds, obj) = trained_ring_model(ObjectiveMode::ElboLearnedSigma);
    let a = evaluate_bound(&model, &ds, &obj, 1, &mut Rng::new(1)).unwrap();
    let b = evaluate_bound(&model, &ds, &obj, 1, &mut Rng::new(1)).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());

    // spread of repeated estimates shrinks roughly as 1/sqrt(samples)
    let spread = |k: usize| {
        let v: Vec<f64> = (0..12)
            .map(|s| evaluate_bound(&model, &ds, &obj, k, &mut Rng::new(100 + s)).unwrap())
            .collect();
        std_dev(&v)
    };
    let (s1, s64) = (spread(1), spread(64));
    let ratio = s1 / s64;
    assert!(ratio > 3.0 && ratio < 20.0, "ratio {ratio}");
}

/// A linear autoencoder that reconstructs its own support exactly: the
/// bound is -KL - (m/2) log 2π.
#[test]
fn perfect_autoencoder_bound() {
    let n = 2;
    let spec = ModelSpec {
        data_dim: 2,
        arch: Architecture::linear(n),
        encoder_var_head: false,
        decoder_std_head: false,
    };
    let ident = Tensor::identity(2);
    let params = vec![ident.clone(), Tensor::zeros(&[2]), ident, Tensor::zeros(&[2])];
    let sigma = vec![1e-12; 2];
    let model = MlpVae::from_parts(spec, params, sigma.clone(), vec![1.0; 2]).unwrap();
    let xs = Tensor::new(&[50, 2], Rng::new(3).normal_vec(100)).unwrap();
    let ds = Dataset::new(xs.clone(), None, 1.0, "").unwrap();
    let obj = ObjectiveSpec::new(ObjectiveMode::ElboConstSigma, sigma.clone(), LikelihoodSpec::gaussian_fixed(1.0));
    let got = evaluate_bound(&model, &ds, &obj, 1, &mut Rng::new(0)).unwrap();
    let kl: f64 = (0..50)
        .map(|i| {
            let q = bilbo_core::DiagGaussian::new(xs.row(i).to_vec(), sigma.clone()).unwrap();
            bilbo_core::gaussian::kl_to_prior(&q, &[1.0, 1.0]).unwrap()
        })
        .sum::<f64>()
        / 50.0;
    let expect = -kl - (2.0 * std::f64::consts::PI).ln();
    assert!((got - expect).abs() < 1e-4, "{got} vs {expect}");
}

/// Scaling the encoder output by c and the decoder input by 1/c, with Σ
/// and the prior scaled by c², leaves the bound unchanged.
#[test]
fn hard_scale_probe() {
    for mode in [ObjectiveMode::Bilbo, ObjectiveMode::ElboLearnedSigma] {
        let (model, ds, obj) = trained_ring_model(mode);
        let base = evaluate_bound(&model, &ds, &obj, 4, &mut Rng::new(8)).unwrap();
        for c in [0.1, 3.0, 50.0] {
            let mut scaled = model.with_latent_scale(c).unwrap();
            let mut obj_c = obj.clone();
            if !mode.learns_sigma() {
                obj_c.sigma_const = obj.sigma_const.iter().map(|s| s * c * c).collect();
                scaled.set_sigma_const(obj_c.sigma_const.clone()).unwrap();
            }
            scaled.set_prior_var(model.prior_var().iter().map(|s| s * c * c).collect()).unwrap();
            let v = evaluate_bound(&scaled, &ds, &obj_c, 4, &mut Rng::new(8)).unwrap();
            assert!((v - base).abs() < 1e-8, "{mode} c={c}: {v} vs {base}");
        }
    }
}

#[test]
fn mnist_sized_step_timing() {
    let xs = Tensor::new(&[300, 784], Rng::new(1).normal_vec(300 * 784)).unwrap();
    let ds = Dataset::new(xs.map(|v| if v > 0.0 { 1.0 } else { 0.0 }), None, 1.0, "").unwrap();
    let obj = ObjectiveSpec::new(ObjectiveMode::Bilbo, vec![0.1; 2], LikelihoodSpec::bernoulli());
    let mut cfg = TrainConfig::new(obj, Architecture::mlp(2));
    cfg.epochs = 3;
    let t = std::time::Instant::now();
    train(&ds, &cfg).unwrap();
    eprintln!("3 MNIST-sized steps: {:?}", t.elapsed());
}
