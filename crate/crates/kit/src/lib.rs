//! Experiment runner for `bilbo-core`: file formats, run manifests, sweeps,
//! exports and the identity-verification suite behind the `bilbo-kit`
//! binary.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod export;
pub mod formats;
pub mod io;
pub mod manifest;
pub mod run;
pub mod sweep;
pub mod verify;

pub use bilbo_core;
pub use error::{KitError, KitResult};
