use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{contract, Result};
use crate::gaussian::{DiagGaussian, LikelihoodKind, MIN_VARIANCE};
use crate::objectives::{Decoded, Encoded, ObjectiveSpec, VaeModel};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::theory::LatentModel;

/// Network shape independent of the data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub latent_dim: usize,
    pub hidden: usize,
    /// ReLU layers before each head; 0 gives a linear VAE.
    pub hidden_layers: usize,
    /// Fixed factor `c` applied to encoder outputs (`μ → cμ`, `Σ → c²Σ`)
    /// and undone at the decoder input.
    pub latent_scale: f64,
}

impl Architecture {
    pub fn mlp(latent_dim: usize) -> Self {
        Self {
            latent_dim,
            hidden: 200,
            hidden_layers: 3,
            latent_scale: 1.0,
        }
    }

    pub fn linear(latent_dim: usize) -> Self {
        Self {
            hidden_layers: 0,
            ..Self::mlp(latent_dim)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub data_dim: usize,
    pub arch: Architecture,
    /// SoftPlus standard-deviation head on the encoder (learned Σ).
    pub encoder_var_head: bool,
    /// SoftPlus standard-deviation head on the decoder (learned T).
    pub decoder_std_head: bool,
}

impl ModelSpec {
    pub fn for_objective(data_dim: usize, arch: Architecture, objective: &ObjectiveSpec) -> Self {
        Self {
            data_dim,
            arch,
            encoder_var_head: objective.mode.learns_sigma(),
            decoder_std_head: objective.likelihood.kind == LikelihoodKind::GaussianLearned,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.arch;
        if self.data_dim == 0 || a.latent_dim == 0 || (a.hidden_layers > 0 && a.hidden == 0) {
            return Err(contract("model dimensions must be positive"));
        }
        if !(a.latent_scale > 0.0) || !a.latent_scale.is_finite() {
            return Err(contract("latent_scale must be positive"));
        }
        Ok(())
    }

    /// Checks the heads agree with what `objective` consumes.
    pub fn check_objective(&self, objective: &ObjectiveSpec) -> Result<()> {
        let want = Self::for_objective(self.data_dim, self.arch, objective);
        if want.encoder_var_head != self.encoder_var_head || want.decoder_std_head != self.decoder_std_head {
            return Err(contract("model heads do not match the objective"));
        }
        if !objective.mode.learns_sigma() && objective.sigma_const.len() != self.arch.latent_dim {
            return Err(contract("sigma_const length differs from the latent dimension"));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every dense layer in parameter order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let a = &self.arch;
        let (m, n, h) = (self.data_dim, a.latent_dim, a.hidden);
        let mut out = Vec::new();
        let trunk = |out: &mut Vec<(usize, usize)>, input: usize| {
            for l in 0..a.hidden_layers {
                out.push((if l == 0 { input } else { h }, h));
            }
        };
        let feat = |input: usize| if a.hidden_layers == 0 { input } else { h };
        trunk(&mut out, m);
        out.push((feat(m), n));
        if self.encoder_var_head {
            out.push((feat(m), n));
        }
        trunk(&mut out, n);
        out.push((feat(n), m));
        if self.decoder_std_head {
            out.push((feat(n), m));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Encoder and decoder weights plus the constant posterior variance and
/// the prior the model is evaluated against.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpVae {
    spec: ModelSpec,
    /// Weight `[in, out]` and bias `[out]` per layer.
    params: Vec<Tensor>,
    /// Constant posterior variance in latent (post-scale) units; empty with
    /// an encoder variance head.
    sigma_const: Vec<f64>,
    prior_var: Vec<f64>,
}

impl MlpVae {
    /// Uniform fan-in initialization, `U(±√(6/fan_in))`, biases zero.
    pub fn init(spec: ModelSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let mut params = Vec::new();
        for (fan_in, fan_out) in spec.layer_shapes() {
            let a = (6.0 / fan_in as f64).sqrt();
            let w = (0..fan_in * fan_out).map(|_| rng.uniform_range(-a, a)).collect();
            params.push(Tensor::new(&[fan_in, fan_out], w)?);
            params.push(Tensor::zeros(&[fan_out]));
        }
        let n = spec.arch.latent_dim;
        Ok(Self {
            spec,
            params,
            sigma_const: if spec.encoder_var_head { Vec::new() } else { vec![1.0; n] },
            prior_var: vec![1.0; n],
        })
    }

    pub fn from_parts(spec: ModelSpec, params: Vec<Tensor>, sigma_const: Vec<f64>, prior_var: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        let ok = params.len() == 2 * shapes.len()
            && shapes
                .iter()
                .enumerate()
                .all(|(k, &(i, o))| params[2 * k].shape() == [i, o] && params[2 * k + 1].shape() == [o]);
        if !ok {
            return Err(contract("parameter shapes do not match the model spec"));
        }
        let n = spec.arch.latent_dim;
        if prior_var.len() != n || sigma_const.len() != if spec.encoder_var_head { 0 } else { n } {
            return Err(contract("sigma/prior lengths do not match the model spec"));
        }
        Ok(Self {
            spec,
            params,
            sigma_const,
            prior_var,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn sigma_const(&self) -> &[f64] {
        &self.sigma_const
    }

    pub fn prior_var(&self) -> &[f64] {
        &self.prior_var
    }

    pub fn set_sigma_const(&mut self, sigma: Vec<f64>) -> Result<()> {
        if self.spec.encoder_var_head || sigma.len() != self.spec.arch.latent_dim || sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(contract("sigma_const must be positive, one entry per latent dim, without a variance head"));
        }
        self.sigma_const = sigma;
        Ok(())
    }

    pub fn set_prior_var(&mut self, prior: Vec<f64>) -> Result<()> {
        if prior.len() != self.spec.arch.latent_dim || prior.iter().any(|s| !(*s > 0.0)) {
            return Err(contract("prior variance must be positive, one entry per latent dim"));
        }
        self.prior_var = prior;
        Ok(())
    }

    /// Same weights with a different `latent_scale`.
    pub fn with_latent_scale(&self, c: f64) -> Result<Self> {
        let mut out = self.clone();
        out.spec.arch.latent_scale = c;
        out.spec.validate()?;
        Ok(out)
    }

    /// Puts the parameters on `tape`, as leaves when `trainable`.
    pub fn bind<'a>(&'a self, tape: &Tape, trainable: bool) -> BoundVae<'a> {
        let vars = self
            .params
            .iter()
            .map(|p| if trainable { tape.leaf(p.clone()) } else { tape.constant(p.clone()) })
            .collect();
        BoundVae { model: self, vars }
    }

    /// Encoder means and per-example variances for every row of `xs`.
    pub fn encode_batch(&self, xs: &Tensor) -> Result<(Tensor, Tensor)> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let x = tape.constant(xs.clone());
        let enc = bound.encode(&tape, x)?;
        let mu = tape.value(enc.mu).clone();
        let var = match enc.var {
            Some(v) => tape.value(v).clone(),
            None => Tensor::from_fn(mu.rows(), mu.cols(), |_, j| self.sigma_const[j]),
        };
        Ok((mu, var))
    }

    /// Decoder means for every row of `zs`.
    pub fn decode_batch(&self, zs: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let z = tape.constant(zs.clone());
        let dec = bound.decode(&tape, z)?;
        let out = tape.value(dec.mean).clone();
        Ok(out)
    }
}

/// A model whose parameters live on a tape.
pub struct BoundVae<'a> {
    model: &'a MlpVae,
    vars: Vec<Var>,
}

impl BoundVae<'_> {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn dense(&self, tape: &Tape, h: Var, layer: usize) -> Result<Var> {
        let y = tape.matmul(h, self.vars[2 * layer])?;
        tape.add_row(y, self.vars[2 * layer + 1])
    }

    fn trunk(&self, tape: &Tape, mut h: Var, first: usize) -> Result<Var> {
        for l in 0..self.model.spec.arch.hidden_layers {
            h = tape.relu(self.dense(tape, h, first + l)?);
        }
        Ok(h)
    }

    fn std_head(&self, tape: &Tape, h: Var, layer: usize) -> Result<Var> {
        Ok(tape.softplus(self.dense(tape, h, layer)?))
    }
}

impl VaeModel for BoundVae<'_> {
    fn encode(&self, tape: &Tape, x: Var) -> Result<Encoded> {
        let spec = &self.model.spec;
        let l = spec.arch.hidden_layers;
        let c = spec.arch.latent_scale;
        let h = self.trunk(tape, x, 0)?;
        let mut mu = self.dense(tape, h, l)?;
        let mut var = if spec.encoder_var_head {
            let std = self.std_head(tape, h, l + 1)?;
            Some(tape.clamp_min(tape.square(std), MIN_VARIANCE))
        } else {
            None
        };
        if c != 1.0 {
            mu = tape.scale(mu, c);
            var = var.map(|v| tape.scale(v, c * c));
        }
        Ok(Encoded { mu, var })
    }

    fn decode(&self, tape: &Tape, z: Var) -> Result<Decoded> {
        let spec = &self.model.spec;
        let l = spec.arch.hidden_layers;
        let first = l + 1 + spec.encoder_var_head as usize;
        let c = spec.arch.latent_scale;
        let z = if c != 1.0 { tape.scale(z, 1.0 / c) } else { z };
        let h = self.trunk(tape, z, first)?;
        let mean = self.dense(tape, h, first + l)?;
        let std = if spec.decoder_std_head {
            Some(self.std_head(tape, h, first + l + 1)?)
        } else {
            None
        };
        Ok(Decoded { mean, std })
    }
}

impl LatentModel for MlpVae {
    fn latent_dim(&self) -> usize {
        self.spec.arch.latent_dim
    }

    fn data_dim(&self) -> usize {
        self.spec.data_dim
    }

    fn encode_one(&self, x: &[f64]) -> Result<DiagGaussian> {
        let (mu, var) = self.encode_batch(&Tensor::matrix(1, x.len(), x.to_vec())?)?;
        DiagGaussian::new(mu.into_data(), var.into_data())
    }

    fn decode_mean(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.decode_batch(&Tensor::matrix(1, z.len(), z.to_vec())?)?.into_data())
    }
}
