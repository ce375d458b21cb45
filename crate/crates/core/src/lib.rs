//! Core numerics for parameter-efficient fine-tuning experiments.
//!
//! Everything here is `no_std` + `alloc`: an exact statevector simulator,
//! layered RX/CNOT circuits with parameter-shift gradients, a reverse-mode
//! tape, the five adaptation strategies (full, LoRA, SoRA, prefix and the
//! quantum amplitude adapter), a small decoder-only transformer and the
//! training step. File formats, timing and the CLI live in the `peftlab`
//! crate.
#![no_std]
#![deny(rust_2018_idioms)]

extern crate alloc;

pub mod adapters;
pub mod circuits;
pub mod error;
pub mod model;
pub mod qsim;
pub mod tensor;
pub mod trainkit;

pub use error::{Error, Result};
