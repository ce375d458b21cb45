//! Closed-form trainable-parameter counts.
//!
//! The backbone follows the GPT-Neo layout: token and learned position
//! embeddings, per layer two layer norms, bias-free Q/K/V projections, an
//! attention output projection with bias, a two-matrix feed-forward block
//! with biases, a final layer norm, and an LM head tied to the token
//! embedding.

use core::fmt;

use crate::error::{Error, Result};
use crate::qsim::qubits_for;

use super::Method;

/// Dimensions that determine the backbone's parameter count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackboneShape {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
}

impl BackboneShape {
    /// GPT-Neo 125M: 50257 tokens, d = 768, 12 layers, 3072-wide FFN, 2048
    /// positions.
    pub const GPT_NEO_125M: BackboneShape = BackboneShape {
        vocab_size: 50257,
        d_model: 768,
        n_layers: 12,
        ffn_dim: 3072,
        max_positions: 2048,
    };

    pub fn total_params(&self) -> u64 {
        let d = self.d_model as u64;
        let f = self.ffn_dim as u64;
        let per_layer = 2 * d // ln_1
            + 3 * d * d // q, k, v
            + d * d + d // out_proj
            + 2 * d // ln_2
            + d * f + f // c_fc
            + f * d + d; // c_proj
        (self.vocab_size as u64 + self.max_positions as u64) * d
            + self.n_layers as u64 * per_layer
            + 2 * d
    }

    /// `(in, out)` of the adapted matrices in one layer: the attention
    /// output projection, then the feed-forward down projection.
    pub fn sites(&self, multiplicity: usize) -> Result<&'static [Site]> {
        const ALL: [Site; 2] = [Site::AttnOut, Site::FfnDown];
        if multiplicity == 0 || multiplicity > ALL.len() {
            return Err(Error::InvalidConfig(alloc::format!(
                "multiplicity must be 1 (attention output) or 2 (plus FFN down), got {multiplicity}"
            )));
        }
        Ok(&ALL[..multiplicity])
    }

    pub fn site_dims(&self, site: Site) -> (usize, usize) {
        match site {
            Site::AttnOut => (self.d_model, self.d_model),
            Site::FfnDown => (self.ffn_dim, self.d_model),
        }
    }
}

/// An adapter insertion point inside a transformer layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Site {
    AttnOut,
    FfnDown,
}

/// Inputs to [`count_trainable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditSpec {
    pub backbone: BackboneShape,
    pub rank: usize,
    pub prefix_len: usize,
    pub depth: usize,
    /// Qubit count for QAA; derived from `d_model` when `None`.
    pub qubits: Option<usize>,
    /// Number of adapted matrices per layer (1 or 2).
    pub multiplicity: usize,
}

/// A trainable-parameter count relative to the full backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub count: u64,
    pub total: u64,
}

impl ParamCount {
    pub fn ratio(&self) -> f64 {
        self.count as f64 / self.total as f64
    }
}

impl fmt::Display for ParamCount {
    /// `147456 (0.12%)`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({:.2}%)", self.count, 100.0 * self.ratio())
    }
}

/// Trainable scalars for `method` on the given backbone.
///
/// Per adapted `in × out` matrix: LoRA `(in + out)·r`, SoRA `(in + out)·r + r`,
/// QAA `D·n + n·out`. Prefix tuning costs `l·d` per layer. For square
/// sites LoRA reduces to the familiar `2·d·r`.
pub fn count_trainable(method: Method, spec: &AuditSpec) -> Result<ParamCount> {
    let bb = &spec.backbone;
    let total = bb.total_params();
    let layers = bb.n_layers as u64;
    let per_site = |f: &dyn Fn(u64, u64) -> u64| -> Result<u64> {
        let sites = bb.sites(spec.multiplicity)?;
        Ok(sites
            .iter()
            .map(|s| {
                let (i, o) = bb.site_dims(*s);
                f(i as u64, o as u64)
            })
            .sum())
    };
    let r = spec.rank as u64;
    let count = match method {
        Method::Full => total,
        Method::Lora => layers * per_site(&|i, o| (i + o) * r)?,
        Method::Sora => layers * per_site(&|i, o| (i + o) * r + r)?,
        Method::Prefix => layers * (spec.prefix_len * bb.d_model) as u64,
        Method::Qaa => {
            let d = spec.depth as u64;
            layers
                * per_site(&|_, o| {
                    let n = spec.qubits.unwrap_or_else(|| qubits_for(o as usize)) as u64;
                    d * n + n * o
                })?
        }
    };
    Ok(ParamCount { count, total })
}
