use alloc::format;
use alloc::vec::Vec;
use core::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[allow(unused_imports)]
use num_traits::Float;

use super::{Dataset, LinearTruth};
use crate::error::{contract, Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    AnisotropicGaussian,
    LinearManifold,
    RingMixture,
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" | "anisotropic-gaussian" => Ok(Self::AnisotropicGaussian),
            "linear" | "linear-manifold" => Ok(Self::LinearManifold),
            "ring" | "ring-mixture" => Ok(Self::RingMixture),
            other => Err(contract(format!("unknown synthetic kind `{other}`"))),
        }
    }
}

/// Synthetic data recipe.
///
/// `variances` holds the latent variances for the Gaussian kinds (its length
/// is `n_true`) and `[radius², bump variance]` for the ring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n_true: usize,
    pub m: usize,
    pub variances: Vec<f64>,
    pub noise_std: f64,
    pub count: usize,
    pub seed: u64,
    /// Ring bumps.
    pub components: usize,
}

impl SyntheticSpec {
    pub fn anisotropic(variances: Vec<f64>, m: usize, count: usize, seed: u64) -> Self {
        Self {
            kind: SyntheticKind::AnisotropicGaussian,
            n_true: variances.len(),
            m,
            variances,
            noise_std: 0.0,
            count,
            seed,
            components: 0,
        }
    }

    pub fn linear(variances: Vec<f64>, m: usize, noise_std: f64, count: usize, seed: u64) -> Self {
        Self {
            kind: SyntheticKind::LinearManifold,
            n_true: variances.len(),
            m,
            variances,
            noise_std,
            count,
            seed,
            components: 0,
        }
    }

    pub fn ring(m: usize, count: usize, seed: u64) -> Self {
        Self {
            kind: SyntheticKind::RingMixture,
            n_true: 2,
            m,
            variances: alloc::vec![4.0, 0.05],
            noise_std: 0.0,
            count,
            seed,
            components: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || self.m == 0 || self.n_true == 0 || self.n_true > self.m {
            return Err(contract("synthetic spec needs count, m >= n_true >= 1"));
        }
        if self.variances.iter().any(|v| !(*v > 0.0)) || !(self.noise_std >= 0.0) {
            return Err(contract("synthetic variances must be positive and noise_std non-negative"));
        }
        match self.kind {
            SyntheticKind::RingMixture if self.n_true != 2 || self.variances.len() != 2 || self.components == 0 => {
                Err(contract("ring needs n_true = 2, variances = [radius², bump var] and components > 0"))
            }
            SyntheticKind::AnisotropicGaussian | SyntheticKind::LinearManifold if self.variances.len() != self.n_true => {
                Err(contract("variances must have n_true entries"))
            }
            _ => Ok(()),
        }
    }
}

fn orthonormal_columns(rng: &mut Rng, m: usize, n: usize) -> DMatrix<f64> {
    let q = DMatrix::from_fn(m, m, |_, _| rng.normal()).qr().q();
    q.columns(0, n).into_owned()
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = Rng::with_stream(spec.seed, crate::rng::stream::DATA);
    let (m, k) = (spec.m, spec.n_true);
    let a = match spec.kind {
        SyntheticKind::AnisotropicGaussian => DMatrix::identity(m, k),
        _ => orthonormal_columns(&mut rng, m, k),
    };
    let mut data = Vec::with_capacity(spec.count * m);
    let mut labels = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let u: Vec<f64> = match spec.kind {
            SyntheticKind::RingMixture => {
                let c = rng.below(spec.components);
                labels.push(c as u32);
                let angle = 2.0 * core::f64::consts::PI * c as f64 / spec.components as f64;
                let (r, s) = (spec.variances[0].sqrt(), spec.variances[1].sqrt());
                alloc::vec![r * angle.cos() + s * rng.normal(), r * angle.sin() + s * rng.normal()]
            }
            _ => spec.variances.iter().map(|v| v.sqrt() * rng.normal()).collect(),
        };
        for row in 0..m {
            let mut v: f64 = (0..k).map(|c| a[(row, c)] * u[c]).sum();
            if spec.noise_std > 0.0 {
                v += spec.noise_std * rng.normal();
            }
            data.push(v);
        }
    }
    let xs = Tensor::new(&[spec.count, m], data)?;
    let meta = format!("synthetic {:?} m={} n_true={} seed={}", spec.kind, m, k, spec.seed);
    match spec.kind {
        SyntheticKind::RingMixture => Dataset::new(xs, Some(labels), 1.0, meta),
        _ => Ok(Dataset::new(xs, None, 1.0, meta)?.with_truth(LinearTruth {
            a,
            variances: spec.variances.clone(),
            noise_std: spec.noise_std,
        })),
    }
}
