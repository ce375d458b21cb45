//! The five adaptation strategies and the trainable-parameter auditor.
//!
//! LoRA, SoRA and the quantum amplitude adapter (QAA) attach to two sites
//! per transformer layer: the attention output projection and the
//! feed-forward down projection. Prefix tuning instead owns one `l × d`
//! block per layer, prepended to that layer's input. Full tuning has no
//! adapter state at all and simply unfreezes the backbone.
//!
//! Every adapter starts with a zero residual: QAA's up-projection is zero,
//! LoRA/SoRA's `B` factor is zero, so an untrained adapter reproduces the
//! frozen model exactly.

mod count;
mod lora;
mod prefix;
mod qaa;
mod sora;

pub use count::{count_trainable, AuditSpec, BackboneShape, ParamCount, Site};
pub use lora::{lora_forward, LoraAdapter};
pub use prefix::{prefix_forward, PrefixAdapter};
pub use qaa::{qaa_forward, QaaAdapter};
pub use sora::{soft_threshold, sora_forward, sora_proximal_step, SoraAdapter};

use core::fmt;
use core::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fine-tuning strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Full,
    Lora,
    Sora,
    Prefix,
    Qaa,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Full,
        Method::Lora,
        Method::Sora,
        Method::Prefix,
        Method::Qaa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::Lora => "lora",
            Method::Sora => "sora",
            Method::Prefix => "prefix",
            Method::Qaa => "qaa",
        }
    }

    /// Whether the backbone weights are trained.
    pub fn trains_backbone(self) -> bool {
        self == Method::Full
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownMethod(s.into()))
    }
}

/// Hyperparameters shared by the adapter constructors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdapterConfig {
    /// LoRA / SoRA rank `r`.
    pub rank: usize,
    /// Prefix length `l`.
    pub prefix_len: usize,
    /// Number of RX + CNOT layers in the QAA circuit.
    pub depth: usize,
    /// ℓ₁ strength on the SoRA gate.
    pub sora_lambda: f64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            rank: 4,
            prefix_len: 4,
            depth: 2,
            sora_lambda: 1e-3,
        }
    }
}

impl AdapterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidConfig("rank must be at least 1".into()));
        }
        if self.depth == 0 {
            return Err(Error::InvalidConfig("circuit depth must be at least 1".into()));
        }
        if !self.sora_lambda.is_finite() || self.sora_lambda < 0.0 {
            return Err(Error::InvalidConfig("sora_lambda must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Standard deviation of the Gaussian used for `A` and prefix vectors.
pub const INIT_STD: f64 = 0.02;
/// QAA angles start uniform in `[-THETA_INIT, THETA_INIT]`.
pub const THETA_INIT: f64 = 0.1;

pub(crate) fn gaussian<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor {
    let normal = Normal::new(0.0, std).expect("positive std");
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = normal.sample(rng);
    }
    t
}
