//! Firmware-modification detection from instruction-class counters, plus a
//! lumped islanded-microgrid simulator for the matching attack scenarios.

pub mod asm;
pub mod corpus;
pub mod error;
pub mod hpc;
pub mod mgsim;
pub mod ml;
pub mod mutate;
pub mod pca;

pub use error::{Error, Result};
