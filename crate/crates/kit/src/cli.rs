//! Command-line interface.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use bilbo_core::data::{SyntheticKind, SyntheticSpec};
use bilbo_core::model::{Architecture, TrainConfig};
use bilbo_core::{LikelihoodSpec, ObjectiveMode, ObjectiveSpec};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{exit, KitError, KitResult};
use crate::export::{export_scatter, load_run, sample_dump};
use crate::formats::SAMPLES_FILE;
use crate::manifest::{CommandConfig, DataSource, RunConfig, RunManifest, SampleConfig, ScatterConfig, SweepAxis, SweepConfig};
use crate::run::{run_train, validate_run};
use crate::sweep::run_sweep;
use crate::verify::{all_passed, render_table, run_verify, VerifyOptions};

#[derive(Debug, Parser)]
#[command(name = "bilbo-kit", version = crate::manifest::tool_version(), about = "Train and verify constant-variance VAE objectives")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write metrics.csv, model.bvae and manifest.json.
    Train(TrainArgs),
    /// Run the identity-verification suite.
    Verify(VerifyArgs),
    /// Train one model per grid value of tau, lambda or sigma.
    Sweep(SweepArgs),
    /// Write encoder means and variances of a 2-D run to scatter.csv.
    ExportScatter(ScatterArgs),
    /// Decode draws from a run's prior into a raw f64 file.
    SampleDump(SampleArgs),
    /// Re-execute a run from its manifest.
    Rerun(RerunArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LikelihoodArg {
    Bernoulli,
    /// Gaussian with fixed isotropic variance `--noise-var`.
    Gaussian,
    /// Gaussian with a learned per-pixel variance head.
    Learned,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Mlp,
    Linear,
}

#[derive(Clone, Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub mnist_images: Option<PathBuf>,
    #[arg(long, requires = "mnist_images")]
    pub mnist_labels: Option<PathBuf>,
    /// Keep at most this many examples.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Synthetic dataset: ring, gaussian or linear.
    #[arg(long, conflicts_with = "mnist_images")]
    pub synthetic: Option<String>,
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    /// elbo-learned, elbo-const, bilbo or bilbo-baggins.
    #[arg(long)]
    pub objective: String,
    /// Posterior standard deviation for constant-variance objectives (Σ = σ²I).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// BAGGINS information factor; required by bilbo-baggins.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Scale applied to the data.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 2)]
    pub latent: usize,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 300)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Defaults to bernoulli for MNIST at lambda 1, gaussian otherwise.
    #[arg(long, value_enum)]
    pub likelihood: Option<LikelihoodArg>,
    /// Likelihood variance T for the fixed Gaussian likelihood.
    #[arg(long, default_value_t = 1.0)]
    pub noise_var: f64,
    #[arg(long, value_enum, default_value_t = ArchArg::Mlp)]
    pub arch: ArchArg,
    #[arg(long, default_value_t = 200)]
    pub hidden: usize,
    #[arg(long, default_value_t = 1.0)]
    pub latent_scale: f64,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct VerifyArgs {
    /// Run a single check.
    #[arg(long)]
    pub only: Option<String>,
    /// Latent or matrix dimension for the randomized checks.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Relative error injected into the analytic decoder Jacobian.
    #[arg(long, default_value_t = 0.0)]
    pub perturb_jacobian: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub axis: SweepAxis,
    /// Comma-separated grid; defaults depend on the axis.
    #[arg(long, value_delimiter = ',')]
    pub grid: Vec<f64>,
    /// Derive a distinct seed per grid point from the base seed.
    #[arg(long)]
    pub independent_seeds: bool,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Clone, Debug, Args)]
pub struct ScatterArgs {
    /// Training run directory.
    #[arg(long)]
    pub run: PathBuf,
    /// Evaluation images; defaults to the run's training data.
    #[arg(long)]
    pub mnist_images: Option<PathBuf>,
    #[arg(long, requires = "mnist_images")]
    pub mnist_labels: Option<PathBuf>,
    #[arg(long)]
    pub limit: Option<usize>,
    /// Defaults to `<run>/scatter`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Defaults to `<run>/samples`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct RerunArgs {
    /// A manifest.json or the directory holding it.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Default synthetic datasets; `seed` fixes the draw.
pub fn synthetic_preset(kind: SyntheticKind, seed: u64, limit: Option<usize>) -> SyntheticSpec {
    let mut spec = match kind {
        SyntheticKind::AnisotropicGaussian => SyntheticSpec::anisotropic(vec![4.0, 0.25], 2, 10_000, seed),
        SyntheticKind::LinearManifold => SyntheticSpec::linear(vec![4.0, 1.0], 5, 1.0, 20_000, seed),
        SyntheticKind::RingMixture => SyntheticSpec::ring(10, 5_000, seed),
    };
    if let Some(l) = limit {
        spec.count = spec.count.min(l);
    }
    spec
}

fn data_source(args: &DataArgs, seed: u64) -> KitResult<DataSource> {
    match (&args.mnist_images, &args.synthetic) {
        (Some(images), None) => Ok(DataSource::Mnist {
            images: images.clone(),
            labels: args.mnist_labels.clone(),
            limit: args.limit,
        }),
        (None, Some(kind)) => {
            let kind: SyntheticKind = kind.parse()?;
            Ok(DataSource::Synthetic {
                spec: synthetic_preset(kind, seed, args.limit),
            })
        }
        _ => Err(KitError::usage("give exactly one of --mnist-images or --synthetic")),
    }
}

/// Builds a run configuration from flags. `tau_fallback` stands in for a
/// missing `--tau` (τ sweeps supply it per grid point).
pub fn run_config(args: &TrainArgs, tau_fallback: Option<f64>) -> KitResult<RunConfig> {
    let mode: ObjectiveMode = args.objective.parse()?;
    let data = data_source(&args.data, args.seed)?;
    let n = args.latent;
    if n == 0 {
        return Err(KitError::usage("--latent must be at least 1"));
    }
    let sigma_const = if mode.learns_sigma() {
        if args.sigma.is_some() {
            return Err(KitError::usage("--sigma applies only to constant-variance objectives"));
        }
        Vec::new()
    } else {
        let sd = args.sigma.unwrap_or(1.0);
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(KitError::usage("--sigma must be positive"));
        }
        vec![sd * sd; n]
    };
    let likelihood = if mode == ObjectiveMode::BilboBaggins {
        if args.likelihood.is_some() {
            return Err(KitError::usage("bilbo-baggins fixes the likelihood; drop --likelihood"));
        }
        let tau = args
            .tau
            .or(tau_fallback)
            .ok_or_else(|| KitError::usage("--objective bilbo-baggins requires --tau"))?;
        LikelihoodSpec::baggins(tau)
    } else {
        if args.tau.is_some() {
            return Err(KitError::usage("--tau applies only to bilbo-baggins"));
        }
        let is_mnist = matches!(data, DataSource::Mnist { .. });
        let kind = args.likelihood.unwrap_or(if is_mnist && args.lambda == 1.0 {
            LikelihoodArg::Bernoulli
        } else {
            LikelihoodArg::Gaussian
        });
        match kind {
            LikelihoodArg::Bernoulli => LikelihoodSpec::bernoulli(),
            LikelihoodArg::Gaussian => LikelihoodSpec::gaussian_fixed(args.noise_var),
            LikelihoodArg::Learned => LikelihoodSpec::gaussian_learned(),
        }
    };
    let mut arch = match args.arch {
        ArchArg::Mlp => Architecture::mlp(n),
        ArchArg::Linear => Architecture::linear(n),
    };
    arch.hidden = args.hidden;
    arch.latent_scale = args.latent_scale;
    let mut train = TrainConfig::new(ObjectiveSpec::new(mode, sigma_const, likelihood), arch);
    train.epochs = args.epochs;
    train.batch_size = args.batch;
    train.learning_rate = args.lr;
    train.seed = args.seed;
    let config = RunConfig {
        data,
        lambda: args.lambda,
        train,
    };
    validate_run(&config)?;
    Ok(config)
}

fn cmd_train(config: &RunConfig, out: &Path) -> KitResult<u8> {
    let outcome = run_train(config, out)?;
    let last = outcome.log.rows.last();
    println!(
        "trained {} steps; final objective {:.6}; clipped {}; skipped {}; wrote {}",
        outcome.log.steps,
        last.map_or(f64::NAN, |r| r.objective),
        outcome.log.clip_events,
        outcome.log.skipped_steps,
        out.display()
    );
    Ok(exit::OK)
}

fn cmd_verify(args: &VerifyArgs) -> KitResult<u8> {
    let opts = VerifyOptions {
        only: args.only.clone(),
        dim: args.dim,
        perturb_jacobian: args.perturb_jacobian,
        seed: args.seed,
    };
    let rows = run_verify(&opts)?;
    print!("{}", render_table(&rows));
    if all_passed(&rows) {
        println!("all {} identities pass", rows.len());
        Ok(exit::OK)
    } else {
        for r in rows.iter().filter(|r| !r.passed) {
            eprintln!("FAILED {}: {} measured {:e} (tolerance {:e})", r.check, r.metric, r.measured, r.tolerance);
        }
        Ok(exit::VERIFY_FAILED)
    }
}

fn cmd_sweep(config: &SweepConfig, out: &Path) -> KitResult<u8> {
    let rows = run_sweep(config, out)?;
    for r in &rows {
        println!(
            "{}={} bound {:.4} rmse/lambda {:.5} t_median {:.4e}",
            r.axis, r.value, r.eval_bound, r.normalized_recon_error, r.baggins_t_median
        );
    }
    println!("wrote {}", out.display());
    Ok(exit::OK)
}

fn cmd_scatter(config: &ScatterConfig, out: &Path) -> KitResult<u8> {
    let rows = export_scatter(config, out)?;
    println!("wrote {} rows to {}", rows.len(), out.display());
    Ok(exit::OK)
}

fn cmd_samples(config: &SampleConfig, out: &Path) -> KitResult<u8> {
    let s = sample_dump(config, out)?;
    println!("wrote {}x{} f64 values to {}", s.rows(), s.cols(), out.join(SAMPLES_FILE).display());
    Ok(exit::OK)
}

fn dispatch(command: Command) -> KitResult<u8> {
    match command {
        Command::Train(args) => cmd_train(&run_config(&args, None)?, &args.out),
        Command::Verify(args) => cmd_verify(&args),
        Command::Sweep(args) => {
            let axis = args.axis;
            let grid = if args.grid.is_empty() { axis.default_grid() } else { args.grid.clone() };
            let tau_fallback = (axis == SweepAxis::Tau).then(|| grid.first().copied()).flatten();
            let config = SweepConfig {
                base: run_config(&args.train, tau_fallback)?,
                axis,
                grid,
                independent_seeds: args.independent_seeds,
            };
            cmd_sweep(&config, &args.train.out)
        }
        Command::ExportScatter(args) => {
            let run = load_run(&args.run)?;
            let data = match &args.mnist_images {
                Some(images) => DataSource::Mnist {
                    images: images.clone(),
                    labels: args.mnist_labels.clone(),
                    limit: args.limit,
                },
                None => run.config.data.clone(),
            };
            let config = ScatterConfig {
                run: args.run.clone(),
                data,
                lambda: run.config.lambda,
            };
            cmd_scatter(&config, &args.out.unwrap_or_else(|| args.run.join("scatter")))
        }
        Command::SampleDump(args) => {
            let config = SampleConfig {
                run: args.run.clone(),
                count: args.count,
                seed: args.seed,
            };
            cmd_samples(&config, &args.out.unwrap_or_else(|| args.run.join("samples")))
        }
        Command::Rerun(args) => match RunManifest::read(&args.manifest)?.config {
            CommandConfig::Train(c) => cmd_train(&c, &args.out),
            CommandConfig::Sweep(c) => cmd_sweep(&c, &args.out),
            CommandConfig::ExportScatter(c) => cmd_scatter(&c, &args.out),
            CommandConfig::SampleDump(c) => cmd_samples(&c, &args.out),
        },
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
