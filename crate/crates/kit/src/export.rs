//! Figure-data exports from a finished training run.

use std::path::{Path, PathBuf};

use bilbo_core::model::{data_space_mean, MlpVae};
use bilbo_core::rng::stream;
use bilbo_core::{Rng, Tensor};

use crate::checkpoint;
use crate::error::{KitError, KitResult};
use crate::formats::{write_csv, ScatterRow, CHECKPOINT_FILE, SAMPLES_FILE, SCATTER_FILE, SCATTER_HEADER};
use crate::io::{create_dir, write_f64_le};
use crate::manifest::{now_unix_ms, CommandConfig, RunConfig, RunManifest, SampleConfig, ScatterConfig};
use crate::run::load_dataset;

/// A finished training run: its configuration and trained model.
pub struct LoadedRun {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub model: MlpVae,
}

pub fn load_run(dir: &Path) -> KitResult<LoadedRun> {
    let manifest = RunManifest::read(dir)?;
    let CommandConfig::Train(config) = manifest.config else {
        return Err(KitError::usage(format!("{} is not a training run", dir.display())));
    };
    let model = checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        config,
        model,
    })
}

/// Encoder means and variances for every example, 2-D latents only.
pub fn scatter_rows(model: &MlpVae, xs: &Tensor, labels: Option<&[u32]>) -> KitResult<Vec<ScatterRow>> {
    if model.spec().arch.latent_dim != 2 {
        return Err(KitError::usage(format!(
            "scatter export needs a 2-D latent space, the model has {}",
            model.spec().arch.latent_dim
        )));
    }
    let (mu, var) = model.encode_batch(xs)?;
    Ok((0..mu.rows())
        .map(|i| ScatterRow {
            mu_1: mu.get(i, 0),
            mu_2: mu.get(i, 1),
            sigma2_1: var.get(i, 0),
            sigma2_2: var.get(i, 1),
            label: labels.map(|l| l[i]),
        })
        .collect())
}

pub fn export_scatter(config: &ScatterConfig, out: &Path) -> KitResult<Vec<ScatterRow>> {
    let started = now_unix_ms();
    let run = load_run(&config.run)?;
    let ds = load_dataset(&config.data, config.lambda)?;
    let rows = scatter_rows(&run.model, ds.xs(), ds.labels())?;
    create_dir(out)?;
    write_csv(&out.join(SCATTER_FILE), SCATTER_HEADER, &rows)?;
    RunManifest::new(CommandConfig::ExportScatter(config.clone()), out, started, vec![SCATTER_FILE.to_string()])
        .write(out)?;
    Ok(rows)
}

/// Draws `count` latents from the model's prior and writes their decoded
/// means (`count x data_dim`, row-major little-endian f64).
pub fn sample_dump(config: &SampleConfig, out: &Path) -> KitResult<Tensor> {
    let started = now_unix_ms();
    if config.count == 0 {
        return Err(KitError::usage("--count must be at least 1"));
    }
    let run = load_run(&config.run)?;
    let prior = run.model.prior_var().to_vec();
    let n = prior.len();
    let mut rng = Rng::with_stream(config.seed, stream::EVAL);
    let z = Tensor::from_fn(config.count, n, |_, j| prior[j].sqrt() * rng.normal());
    let decoded = run.model.decode_batch(&z)?;
    let samples = data_space_mean(decoded, &run.config.train.objective.likelihood);
    create_dir(out)?;
    write_f64_le(&out.join(SAMPLES_FILE), samples.data())?;
    RunManifest::new(CommandConfig::SampleDump(config.clone()), out, started, vec![SAMPLES_FILE.to_string()])
        .write(out)?;
    Ok(samples)
}
