//! Training runs and their on-disk outputs.

use std::path::Path;

use bilbo_core::data::{gen_synthetic, Dataset};
use bilbo_core::model::{train, MetricsLog, MlpVae};
use bilbo_core::LikelihoodKind;

use crate::checkpoint;
use crate::error::{KitError, KitResult};
use crate::formats::{write_metrics, CHECKPOINT_FILE, METRICS_FILE};
use crate::io::{create_dir, load_idx};
use crate::manifest::{now_unix_ms, CommandConfig, DataSource, RunConfig, RunManifest};

pub fn load_dataset(source: &DataSource, lambda: f64) -> KitResult<Dataset> {
    match source {
        DataSource::Mnist { images, labels, limit } => load_idx(images, labels.as_deref(), *limit, lambda),
        DataSource::Synthetic { spec } => {
            let ds = gen_synthetic(spec)?;
            Ok(if lambda == 1.0 { ds } else { ds.scaled(lambda)? })
        }
    }
}

pub struct TrainOutcome {
    pub model: MlpVae,
    pub log: MetricsLog,
    pub dataset: Dataset,
}

/// Trains per `config` and writes `metrics.csv`, `model.bvae` and
/// `manifest.json` into `out`.
pub fn run_train(config: &RunConfig, out: &Path) -> KitResult<TrainOutcome> {
    let started = now_unix_ms();
    validate_run(config)?;
    let dataset = load_dataset(&config.data, config.lambda)?;
    create_dir(out)?;
    let (model, log) = train(&dataset, &config.train)?;
    write_metrics(&out.join(METRICS_FILE), &log.rows)?;
    checkpoint::save(&model, &out.join(CHECKPOINT_FILE))?;
    let outputs = vec![METRICS_FILE.to_string(), CHECKPOINT_FILE.to_string()];
    RunManifest::new(CommandConfig::Train(config.clone()), out, started, outputs).write(out)?;
    Ok(TrainOutcome { model, log, dataset })
}

/// Checks that apply across commands beyond [`TrainConfig::validate`].
///
/// [`TrainConfig::validate`]: bilbo_core::model::TrainConfig::validate
pub fn validate_run(config: &RunConfig) -> KitResult<()> {
    config.train.validate()?;
    if !(config.lambda > 0.0) || !config.lambda.is_finite() {
        return Err(KitError::usage("lambda must be positive"));
    }
    if config.train.objective.likelihood.kind == LikelihoodKind::BernoulliLogits && config.lambda != 1.0 {
        return Err(KitError::usage("the Bernoulli likelihood needs data in [0, 1]; use a Gaussian likelihood when lambda != 1"));
    }
    let obj = &config.train.objective;
    if !obj.mode.learns_sigma() && obj.sigma_const.len() != config.train.arch.latent_dim {
        return Err(KitError::usage("sigma length differs from the latent dimension"));
    }
    Ok(())
}
