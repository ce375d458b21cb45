//! A small pre-LN decoder-only transformer with adapter sites.
//!
//! The layout mirrors GPT-Neo: token and learned position embeddings, per
//! layer `ln_1 → causal attention → out_proj` and `ln_2 → fc → GELU → proj`,
//! each added back into the residual stream, then `ln_f` and a head tied to
//! the token embedding.
//!
//! LoRA, SoRA and QAA act on the output of `out_proj` and of `proj` before
//! the residual addition. Prefix tuning prepends its rows to each layer's
//! input and drops them again after the layer.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::adapters::{
    gaussian, lora_forward, prefix_forward, qaa_forward, sora_forward, AdapterConfig, BackboneShape, LoraAdapter,
    Method, PrefixAdapter, QaaAdapter, Site, SoraAdapter, INIT_STD,
};
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;

/// Transformer dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchSpec {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_mult: usize,
    pub max_seq_len: usize,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self {
            vocab_size: 256,
            d_model: 32,
            n_layers: 2,
            n_heads: 2,
            ffn_mult: 4,
            max_seq_len: 64,
        }
    }
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("ffn_mult", self.ffn_mult),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn ffn_dim(&self) -> usize {
        self.d_model * self.ffn_mult
    }

    pub fn shape(&self) -> BackboneShape {
        BackboneShape {
            vocab_size: self.vocab_size,
            d_model: self.d_model,
            n_layers: self.n_layers,
            ffn_dim: self.ffn_dim(),
            max_positions: self.max_seq_len,
        }
    }
}

/// Parameter handles for one transformer layer. Weights are `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
    pub w_fc: ParamId,
    pub b_fc: ParamId,
    pub w_proj: ParamId,
    pub b_proj: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub wte: ParamId,
    pub wpe: ParamId,
    pub layers: Vec<LayerParams>,
    pub lnf_g: ParamId,
    pub lnf_b: ParamId,
}

impl Backbone {
    /// Adds freshly initialized backbone tensors to `store`.
    fn init<R: Rng + ?Sized>(store: &mut ParamStore, arch: &ArchSpec, rng: &mut R) -> Self {
        let d = arch.d_model;
        let f = arch.ffn_dim();
        let ones = |store: &mut ParamStore, name: &str| {
            let mut t = Tensor::zeros(&[d]);
            t.data_mut().fill(1.0);
            store.add(name, t)
        };
        let wte = store.add("backbone.wte", gaussian(rng, &[arch.vocab_size, d], INIT_STD));
        let wpe = store.add("backbone.wpe", gaussian(rng, &[arch.max_seq_len, d], INIT_STD));
        let mut layers = Vec::with_capacity(arch.n_layers);
        for i in 0..arch.n_layers {
            let p = format!("backbone.h{i}");
            let ln1_g = ones(store, &format!("{p}.ln_1.weight"));
            let ln1_b = store.add(format!("{p}.ln_1.bias"), Tensor::zeros(&[d]));
            let wq = store.add(format!("{p}.attn.wq"), gaussian(rng, &[d, d], INIT_STD));
            let wk = store.add(format!("{p}.attn.wk"), gaussian(rng, &[d, d], INIT_STD));
            let wv = store.add(format!("{p}.attn.wv"), gaussian(rng, &[d, d], INIT_STD));
            let wo = store.add(format!("{p}.attn.wo"), gaussian(rng, &[d, d], INIT_STD));
            let bo = store.add(format!("{p}.attn.bo"), Tensor::zeros(&[d]));
            let ln2_g = ones(store, &format!("{p}.ln_2.weight"));
            let ln2_b = store.add(format!("{p}.ln_2.bias"), Tensor::zeros(&[d]));
            let w_fc = store.add(format!("{p}.mlp.w_fc"), gaussian(rng, &[f, d], INIT_STD));
            let b_fc = store.add(format!("{p}.mlp.b_fc"), Tensor::zeros(&[f]));
            let w_proj = store.add(format!("{p}.mlp.w_proj"), gaussian(rng, &[d, f], INIT_STD));
            let b_proj = store.add(format!("{p}.mlp.b_proj"), Tensor::zeros(&[d]));
            layers.push(LayerParams {
                ln1_g,
                ln1_b,
                wq,
                wk,
                wv,
                wo,
                bo,
                ln2_g,
                ln2_b,
                w_fc,
                b_fc,
                w_proj,
                b_proj,
            });
        }
        let lnf_g = ones(store, "backbone.ln_f.weight");
        let lnf_b = store.add("backbone.ln_f.bias", Tensor::zeros(&[d]));
        Self {
            wte,
            wpe,
            layers,
            lnf_g,
            lnf_b,
        }
    }

    /// Every backbone handle, in store order.
    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.wte, self.wpe];
        for l in &self.layers {
            ids.extend([
                l.ln1_g, l.ln1_b, l.wq, l.wk, l.wv, l.wo, l.bo, l.ln2_g, l.ln2_b, l.w_fc, l.b_fc, l.w_proj, l.b_proj,
            ]);
        }
        ids.extend([self.lnf_g, self.lnf_b]);
        ids
    }
}

/// Per-layer adapter state; site arrays are `[attention out, FFN down]`.
#[derive(Debug, Clone, PartialEq)]
pub enum AdapterSet {
    None,
    Lora(Vec<[LoraAdapter; 2]>),
    Sora(Vec<[SoraAdapter; 2]>),
    Prefix(Vec<PrefixAdapter>),
    Qaa(Vec<[QaaAdapter; 2]>),
}

impl AdapterSet {
    fn build<R: Rng + ?Sized>(
        store: &mut ParamStore,
        arch: &ArchSpec,
        method: Method,
        cfg: &AdapterConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let shape = arch.shape();
        let sites = [Site::AttnOut, Site::FfnDown];
        let name = |layer: usize, site: Site| match site {
            Site::AttnOut => format!("h{layer}.attn_out"),
            Site::FfnDown => format!("h{layer}.ffn_down"),
        };
        let layers = 0..arch.n_layers;
        Ok(match method {
            Method::Full => AdapterSet::None,
            Method::Lora => AdapterSet::Lora(
                layers
                    .map(|l| {
                        sites.map(|s| {
                            let (i, o) = shape.site_dims(s);
                            LoraAdapter::new(store, &name(l, s), i, o, cfg.rank, rng)
                        })
                    })
                    .collect(),
            ),
            Method::Sora => AdapterSet::Sora(
                layers
                    .map(|l| {
                        sites.map(|s| {
                            let (i, o) = shape.site_dims(s);
                            SoraAdapter::new(store, &name(l, s), i, o, cfg.rank, rng)
                        })
                    })
                    .collect(),
            ),
            Method::Prefix => AdapterSet::Prefix(
                layers
                    .map(|l| PrefixAdapter::new(store, &format!("h{l}"), cfg.prefix_len, arch.d_model, rng))
                    .collect(),
            ),
            Method::Qaa => {
                let mut out = Vec::with_capacity(arch.n_layers);
                for l in layers {
                    let attn = QaaAdapter::new(store, &name(l, Site::AttnOut), arch.d_model, cfg.depth, rng)?;
                    let ffn = QaaAdapter::new(store, &name(l, Site::FfnDown), arch.d_model, cfg.depth, rng)?;
                    out.push([attn, ffn]);
                }
                AdapterSet::Qaa(out)
            }
        })
    }

    /// Number of adapter insertion points (per-layer prefixes count once each).
    pub fn site_count(&self) -> usize {
        match self {
            AdapterSet::None => 0,
            AdapterSet::Lora(v) => 2 * v.len(),
            AdapterSet::Sora(v) => 2 * v.len(),
            AdapterSet::Qaa(v) => 2 * v.len(),
            AdapterSet::Prefix(v) => v.len(),
        }
    }
}

/// A backbone plus the adapters for one method, all tensors in one store.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: ArchSpec,
    pub method: Method,
    pub adapter_config: AdapterConfig,
    pub store: ParamStore,
    pub backbone: Backbone,
    pub adapters: AdapterSet,
}

impl Model {
    /// Random backbone plus fresh adapters for `method`.
    pub fn new<R: Rng + ?Sized>(arch: ArchSpec, method: Method, cfg: AdapterConfig, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        cfg.validate()?;
        let mut store = ParamStore::new();
        let backbone = Backbone::init(&mut store, &arch, rng);
        Self::finish(arch, method, cfg, store, backbone, rng)
    }

    /// Copies `source`'s backbone weights and attaches fresh adapters.
    pub fn with_backbone<R: Rng + ?Sized>(
        source: &Model,
        method: Method,
        cfg: AdapterConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        // Backbone tensors are always the first entries of the store.
        let mut store = ParamStore::new();
        for id in source.backbone.ids() {
            let id2 = store.add(source.store.name(id), source.store.get(id).clone());
            debug_assert_eq!(id, id2);
        }
        Self::finish(source.arch, method, cfg, store, source.backbone.clone(), rng)
    }

    fn finish<R: Rng + ?Sized>(
        arch: ArchSpec,
        method: Method,
        cfg: AdapterConfig,
        mut store: ParamStore,
        backbone: Backbone,
        rng: &mut R,
    ) -> Result<Self> {
        for id in backbone.ids() {
            store.get_mut(id).set_requires_grad(method.trains_backbone());
        }
        let adapters = AdapterSet::build(&mut store, &arch, method, &cfg, rng)?;
        Ok(Self {
            arch,
            method,
            adapter_config: cfg,
            store,
            backbone,
            adapters,
        })
    }

    pub fn trainable_count(&self) -> usize {
        self.store.trainable_count()
    }

    /// Rows each layer prepends ahead of the tokens.
    pub fn prefix_len(&self) -> usize {
        match &self.adapters {
            AdapterSet::Prefix(v) => v.first().map_or(0, |p| p.len),
            _ => 0,
        }
    }

    /// Longest token sequence the model accepts.
    pub fn max_tokens(&self) -> usize {
        self.arch.max_seq_len.saturating_sub(self.prefix_len())
    }

    /// SoRA gate handles, empty for other methods.
    pub fn sora_gates(&self) -> Vec<ParamId> {
        match &self.adapters {
            AdapterSet::Sora(v) => v.iter().flat_map(|s| s.iter().map(|a| a.gate)).collect(),
            _ => Vec::new(),
        }
    }

    /// Logits `T × vocab_size` for one sequence.
    pub fn forward(&self, tape: &mut Tape, tokens: &[usize]) -> Result<Var> {
        let t = tokens.len();
        if t == 0 {
            return Err(Error::ShapeMismatch("empty token sequence".into()));
        }
        if t > self.max_tokens() {
            return Err(Error::SequenceTooLong {
                len: t + self.prefix_len(),
                max: self.arch.max_seq_len,
            });
        }
        let s = &self.store;
        let wte = tape.param(s, self.backbone.wte);
        let wpe = tape.param(s, self.backbone.wpe);
        let positions: Vec<usize> = (0..t).collect();
        let tok = tape.embedding(wte, tokens)?;
        let pos = tape.embedding(wpe, &positions)?;
        let mut x = tape.add(tok, pos)?;
        for (i, layer) in self.backbone.layers.iter().enumerate() {
            x = self.layer(tape, i, layer, x)?;
        }
        let g = tape.param(s, self.backbone.lnf_g);
        let b = tape.param(s, self.backbone.lnf_b);
        let h = tape.layer_norm(x, g, b, LN_EPS)?;
        tape.matmul_t(h, wte)
    }

    /// Forward pass on a throwaway inference tape; returns row-major logits.
    pub fn logits(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::inference();
        let y = self.forward(&mut tape, tokens)?;
        Ok(tape.value(y).to_vec())
    }

    fn layer(&self, tape: &mut Tape, index: usize, p: &LayerParams, x: Var) -> Result<Var> {
        let s = &self.store;
        let x = match &self.adapters {
            AdapterSet::Prefix(v) => prefix_forward(tape, s, &v[index], x)?,
            _ => x,
        };
        let (rows, d) = tape.dims(x);

        let g1 = tape.param(s, p.ln1_g);
        let b1 = tape.param(s, p.ln1_b);
        let a = tape.layer_norm(x, g1, b1, LN_EPS)?;
        let wq = tape.param(s, p.wq);
        let wk = tape.param(s, p.wk);
        let wv = tape.param(s, p.wv);
        let q = tape.matmul_t(a, wq)?;
        let k = tape.matmul_t(a, wk)?;
        let v = tape.matmul_t(a, wv)?;
        let dh = d / self.arch.n_heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut heads = Vec::with_capacity(self.arch.n_heads);
        for h in 0..self.arch.n_heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let scores = tape.matmul_t(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.causal_softmax(scores)?;
            heads.push(tape.matmul(attn, vh)?);
        }
        let ctx = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
        let attn_out = self.site(tape, index, Site::AttnOut, ctx, p.wo, p.bo)?;
        let x = tape.add(x, attn_out)?;

        let g2 = tape.param(s, p.ln2_g);
        let b2 = tape.param(s, p.ln2_b);
        let m = tape.layer_norm(x, g2, b2, LN_EPS)?;
        let w_fc = tape.param(s, p.w_fc);
        let b_fc = tape.param(s, p.b_fc);
        let fc = tape.matmul_t(m, w_fc)?;
        let fc = tape.add_row(fc, b_fc)?;
        let act = tape.gelu(fc);
        let ffn_out = self.site(tape, index, Site::FfnDown, act, p.w_proj, p.b_proj)?;
        let x = tape.add(x, ffn_out)?;

        match self.prefix_len() {
            0 => Ok(x),
            l => tape.slice_rows(x, l, rows - l),
        }
    }

    /// `h·Wᵀ + b` for one adapted projection, with the method's update.
    fn site(&self, tape: &mut Tape, layer: usize, site: Site, h: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let s = &self.store;
        let idx = site as usize;
        let wv = tape.param(s, w);
        let bv = tape.param(s, b);
        match &self.adapters {
            AdapterSet::Lora(v) => {
                let y = lora_forward(tape, s, &v[layer][idx], h, wv)?;
                tape.add_row(y, bv)
            }
            AdapterSet::Sora(v) => {
                let y = sora_forward(tape, s, &v[layer][idx], h, wv)?;
                tape.add_row(y, bv)
            }
            AdapterSet::Qaa(v) => {
                let y = tape.matmul_t(h, wv)?;
                let y = tape.add_row(y, bv)?;
                qaa_forward(tape, s, &v[layer][idx], y)
            }
            AdapterSet::None | AdapterSet::Prefix(_) => {
                let y = tape.matmul_t(h, wv)?;
                tape.add_row(y, bv)
            }
        }
    }

    /// Greedy decoding; ties go to the lowest token id.
    pub fn generate(&self, prompt: &[usize], max_new_tokens: usize) -> Result<Vec<usize>> {
        if prompt.is_empty() {
            return Err(Error::ShapeMismatch("empty prompt".into()));
        }
        let total = prompt.len() + max_new_tokens;
        if total > self.max_tokens() {
            return Err(Error::SequenceTooLong {
                len: total + self.prefix_len(),
                max: self.arch.max_seq_len,
            });
        }
        let v = self.arch.vocab_size;
        let mut seq = prompt.to_vec();
        for _ in 0..max_new_tokens {
            let logits = self.logits(&seq)?;
            let last = &logits[logits.len() - v..];
            let mut best = 0;
            for (i, &x) in last.iter().enumerate() {
                if x > last[best] {
                    best = i;
                }
            }
            seq.push(best);
        }
        Ok(seq)
    }
}
