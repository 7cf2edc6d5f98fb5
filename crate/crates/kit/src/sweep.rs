//! Grid sweeps over τ, λ or σ.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use bilbo_core::model::{evaluate_bound, reconstruction_rmse};
use bilbo_core::rng::{derive_seed, stream};
use bilbo_core::stats::median;
use bilbo_core::{LikelihoodSpec, ObjectiveMode, Rng};

use crate::error::{KitError, KitResult};
use crate::formats::{write_csv, SweepRow, SWEEP_FILE, SWEEP_HEADER};
use crate::io::create_dir;
use crate::manifest::{now_unix_ms, CommandConfig, RunConfig, RunManifest, SweepAxis, SweepConfig};
use crate::run::{run_train, validate_run};

pub const THREADS_ENV: &str = "BILBO_KIT_THREADS";

/// Worker cap from `BILBO_KIT_THREADS`; 1 when unset or unparsable.
pub fn worker_limit() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|v| *v > 0)
        .unwrap_or(1)
}

pub fn point_seed(config: &SweepConfig, index: usize) -> u64 {
    let base = config.base.train.seed;
    if config.independent_seeds {
        derive_seed(base, index as u64)
    } else {
        base
    }
}

/// The training run for grid point `index`.
pub fn point_config(config: &SweepConfig, index: usize) -> KitResult<RunConfig> {
    let value = *config
        .grid
        .get(index)
        .ok_or_else(|| KitError::usage(format!("grid index {index} out of range")))?;
    let mut run = config.base.clone();
    let obj = &mut run.train.objective;
    match config.axis {
        SweepAxis::Tau => {
            if obj.mode != ObjectiveMode::BilboBaggins {
                return Err(KitError::usage("a tau sweep needs --objective bilbo-baggins"));
            }
            obj.likelihood = LikelihoodSpec::baggins(value);
        }
        SweepAxis::Lambda => run.lambda = value,
        SweepAxis::Sigma => {
            if obj.mode.learns_sigma() {
                return Err(KitError::usage("a sigma sweep needs a constant-sigma objective"));
            }
            obj.sigma_const = vec![value * value; run.train.arch.latent_dim];
        }
    }
    run.train.seed = point_seed(config, index);
    validate_run(&run)?;
    Ok(run)
}

pub fn point_dir(out: &Path, index: usize) -> PathBuf {
    out.join(format!("point-{index:03}"))
}

fn run_point(config: &SweepConfig, index: usize, out: &Path) -> KitResult<SweepRow> {
    let run = point_config(config, index)?;
    let outcome = run_train(&run, &point_dir(out, index))?;
    let mut rng = Rng::with_stream(run.train.seed, stream::EVAL);
    let eval_bound = evaluate_bound(&outcome.model, &outcome.dataset, &run.train.objective, 1, &mut rng)?;
    let recon_rmse = reconstruction_rmse(&outcome.model, &outcome.dataset, &run.train.objective.likelihood)?;
    let last = outcome.log.rows.last();
    let t_tail: Vec<f64> = outcome.log.rows.iter().rev().take(10).map(|r| r.baggins_t_median).collect();
    Ok(SweepRow {
        axis: config.axis.as_str().to_string(),
        value: config.grid[index],
        seed: run.train.seed,
        final_objective: last.map_or(f64::NAN, |r| r.objective),
        eval_bound,
        recon_rmse,
        normalized_recon_error: recon_rmse / run.lambda,
        baggins_t_median: median(&t_tail),
        clip_events: outcome.log.clip_events,
    })
}

/// Trains every grid point (up to [`worker_limit`] at a time), then writes
/// `sweep.csv` and the sweep manifest into `out`.
pub fn run_sweep(config: &SweepConfig, out: &Path) -> KitResult<Vec<SweepRow>> {
    let started = now_unix_ms();
    if config.grid.is_empty() {
        return Err(KitError::usage("empty sweep grid"));
    }
    for i in 0..config.grid.len() {
        point_config(config, i)?;
    }
    create_dir(out)?;
    let workers = worker_limit().min(config.grid.len());
    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<KitResult<SweepRow>>>> = config.grid.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= config.grid.len() {
                    break;
                }
                let r = run_point(config, i, out);
                *results[i].lock().unwrap() = Some(r);
            });
        }
    });
    let rows = results
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every grid point ran"))
        .collect::<KitResult<Vec<_>>>()?;
    write_csv(&out.join(SWEEP_FILE), SWEEP_HEADER, &rows)?;
    RunManifest::new(CommandConfig::Sweep(config.clone()), out, started, vec![SWEEP_FILE.to_string()]).write(out)?;
    Ok(rows)
}
