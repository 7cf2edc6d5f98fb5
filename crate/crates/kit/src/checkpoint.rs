//! `BVAE` model checkpoints.
//!
//! Layout (all integers little-endian `u32`, all reals little-endian `f64`):
//!
//! ```text
//! b"BVAE" version
//! data_dim latent_dim hidden hidden_layers latent_scale:f64
//! encoder_var_head:u8 decoder_std_head:u8
//! sigma_len sigma[..] prior_len prior[..]
//! tensor_count { ndim dims[..] values[..] }*
//! crc32 (of every preceding byte)
//! ```

use std::path::Path;

use bilbo_core::model::{Architecture, MlpVae, ModelSpec};
use bilbo_core::Tensor;

use crate::error::{KitError, KitResult};
use crate::io::{read_file, write_file};

pub const MAGIC: &[u8; 4] = b"BVAE";
pub const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        self.u32(vs.len());
        vs.iter().for_each(|v| self.f64(*v));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], String> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let Some(end) = end else {
            return Err(format!("truncated at byte {}", self.pos));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>, String> {
        let n = self.u32()?;
        if n > (self.bytes.len() - self.pos) / 8 {
            return Err(format!("length {n} at byte {} exceeds the file", self.pos - 4));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn to_bytes(model: &MlpVae) -> Vec<u8> {
    let spec = model.spec();
    let mut w = Writer(Vec::with_capacity(64 + 8 * model.param_count()));
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION as usize);
    w.u32(spec.data_dim);
    w.u32(spec.arch.latent_dim);
    w.u32(spec.arch.hidden);
    w.u32(spec.arch.hidden_layers);
    w.f64(spec.arch.latent_scale);
    w.0.push(spec.encoder_var_head as u8);
    w.0.push(spec.decoder_std_head as u8);
    w.f64s(model.sigma_const());
    w.f64s(model.prior_var());
    w.u32(model.params().len());
    for p in model.params() {
        w.u32(p.shape().len());
        p.shape().iter().for_each(|d| w.u32(*d));
        p.data().iter().for_each(|v| w.f64(*v));
    }
    let crc = crc32fast::hash(&w.0);
    w.0.extend_from_slice(&crc.to_le_bytes());
    w.0
}

pub fn from_bytes(bytes: &[u8]) -> Result<MlpVae, String> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err("not a BVAE checkpoint (bad magic)".into());
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(format!("checksum mismatch: stored {stored:#010x}, computed {actual:#010x}"));
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let data_dim = r.u32()?;
    let arch = Architecture {
        latent_dim: r.u32()?,
        hidden: r.u32()?,
        hidden_layers: r.u32()?,
        latent_scale: r.f64()?,
    };
    let spec = ModelSpec {
        data_dim,
        arch,
        encoder_var_head: r.u8()? != 0,
        decoder_std_head: r.u8()? != 0,
    };
    let sigma = r.f64s()?;
    let prior = r.f64s()?;
    let count = r.u32()?;
    let mut params = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let ndim = r.u32()?;
        if ndim > 2 {
            return Err(format!("tensor rank {ndim} at byte {} exceeds 2", r.pos - 4));
        }
        let shape: Vec<usize> = (0..ndim).map(|_| r.u32()).collect::<Result<_, _>>()?;
        let len: usize = shape.iter().product();
        if len > (body.len() - r.pos) / 8 {
            return Err(format!("tensor of {len} values at byte {} exceeds the file", r.pos));
        }
        let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        params.push(Tensor::new(&shape, data).map_err(|e| e.to_string())?);
    }
    if r.pos != body.len() {
        return Err(format!("{} trailing bytes before the checksum", body.len() - r.pos));
    }
    MlpVae::from_parts(spec, params, sigma, prior).map_err(|e| e.to_string())
}

pub fn save(model: &MlpVae, path: &Path) -> KitResult<()> {
    write_file(path, &to_bytes(model))
}

pub fn load(path: &Path) -> KitResult<MlpVae> {
    from_bytes(&read_file(path)?).map_err(|message| KitError::Format {
        path: path.to_path_buf(),
        message,
    })
}
