use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{contract, Error, Result};
use crate::gaussian::DiagGaussian;

/// A frozen ensemble of data points and their posteriors.
#[derive(Clone, Debug)]
pub struct TheoryDataset {
    xs: DMatrix<f64>,
    posteriors: Vec<DiagGaussian>,
    prior_var: Vec<f64>,
}

impl TheoryDataset {
    /// `xs` is `N x m`, one row per example.
    pub fn new(xs: DMatrix<f64>, posteriors: Vec<DiagGaussian>, prior_var: Vec<f64>) -> Result<Self> {
        if posteriors.is_empty() || xs.nrows() != posteriors.len() {
            return Err(contract("TheoryDataset needs one posterior per row and N >= 1"));
        }
        let n = posteriors[0].dim();
        if posteriors.iter().any(|q| q.dim() != n) || prior_var.len() != n {
            return Err(Error::Shape {
                op: "TheoryDataset",
                lhs: alloc::vec![n],
                rhs: alloc::vec![prior_var.len()],
            });
        }
        Ok(Self { xs, posteriors, prior_var })
    }

    pub fn len(&self) -> usize {
        self.posteriors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posteriors.is_empty()
    }

    pub fn data_dim(&self) -> usize {
        self.xs.ncols()
    }

    pub fn latent_dim(&self) -> usize {
        self.prior_var.len()
    }

    pub fn xs(&self) -> &DMatrix<f64> {
        &self.xs
    }

    pub fn posteriors(&self) -> &[DiagGaussian] {
        &self.posteriors
    }

    pub fn prior_var(&self) -> &[f64] {
        &self.prior_var
    }
}

#[derive(Clone, Debug)]
pub struct DecoderEval {
    pub value: DVector<f64>,
    /// Every posterior density underflowed at `z`; `value` is the nearest
    /// example's data point.
    pub extrapolated: bool,
}

#[derive(Clone, Debug)]
pub struct JacobianEval {
    /// `m x n`.
    pub value: DMatrix<f64>,
    pub extrapolated: bool,
}

/// Normalized weights `wᵢ ∝ N(z; μᵢ, Σᵢ)`, or the index of the nearest
/// posterior (Mahalanobis) when all densities underflow.
fn weights(z: &[f64], ds: &TheoryDataset) -> Result<core::result::Result<Vec<f64>, usize>> {
    if z.len() != ds.latent_dim() {
        return Err(Error::Shape {
            op: "optimal_decoder",
            lhs: alloc::vec![z.len()],
            rhs: alloc::vec![ds.latent_dim()],
        });
    }
    let logw: Vec<f64> = ds.posteriors.iter().map(|q| q.log_density(z)).collect();
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > f64::MIN_POSITIVE.ln()) {
        let maha = |q: &DiagGaussian| -> f64 {
            z.iter()
                .zip(q.mean())
                .zip(q.var())
                .map(|((z, m), v)| (z - m) * (z - m) / v)
                .sum()
        };
        let nearest = (0..ds.len())
            .min_by(|&a, &b| maha(&ds.posteriors[a]).total_cmp(&maha(&ds.posteriors[b])))
            .expect("non-empty");
        return Ok(Err(nearest));
    }
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(Ok(w.into_iter().map(|v| v / total).collect()))
}

/// Kernel-weighted mean of the data under the posterior densities at `z`.
pub fn optimal_decoder(z: &[f64], ds: &TheoryDataset) -> Result<DecoderEval> {
    Ok(match weights(z, ds)? {
        Ok(w) => DecoderEval {
            value: ds.xs.tr_mul(&DVector::from_vec(w)),
            extrapolated: false,
        },
        Err(i) => DecoderEval {
            value: ds.xs.row(i).transpose(),
            extrapolated: true,
        },
    })
}

/// `Σᵢ wᵢ (ν - xᵢ)(z - μᵢ)ᵀ Σᵢ⁻¹ / Σᵢ wᵢ`, the derivative of
/// [`optimal_decoder`] with respect to `z`.
pub fn optimal_decoder_jacobian(z: &[f64], ds: &TheoryDataset) -> Result<JacobianEval> {
    let (m, n) = (ds.data_dim(), ds.latent_dim());
    let w = match weights(z, ds)? {
        Ok(w) => w,
        Err(_) => {
            return Ok(JacobianEval {
                value: DMatrix::zeros(m, n),
                extrapolated: true,
            })
        }
    };
    let nu = ds.xs.tr_mul(&DVector::from_column_slice(&w));
    let mut jac = DMatrix::zeros(m, n);
    for (i, (q, wi)) in ds.posteriors.iter().zip(&w).enumerate() {
        let d = &nu - ds.xs.row(i).transpose();
        let g = DVector::from_iterator(n, z.iter().zip(q.mean()).zip(q.var()).map(|((z, mu), v)| (z - mu) / v));
        jac += (d * g.transpose()) * *wi;
    }
    Ok(JacobianEval {
        value: jac,
        extrapolated: false,
    })
}
