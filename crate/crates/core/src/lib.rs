#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
pub mod fd;
pub mod gaussian;
pub mod objectives;

pub use gaussian::{DiagGaussian, LikelihoodKind, LikelihoodSpec};
pub use objectives::{ObjectiveMode, ObjectiveSpec};
pub mod stats;
pub mod theory;
pub mod data;
pub mod model;
