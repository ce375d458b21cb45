//! TOML run configuration.
//!
//! Every field is optional and defaults to the desk-scale setup; unknown
//! keys are rejected. Relative corpus and `out_dir` paths resolve against
//! the config file's directory.

use std::path::{Path, PathBuf};

use peftlab_core::adapters::{AdapterConfig, Method};
use peftlab_core::model::ArchSpec;
use peftlab_core::trainkit::{default_lr, OptimizerConfig, OptimizerKind, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusSource;
use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub method: String,
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub seq_len: usize,
    /// Fine-tuning text: `builtin`, `copy`, or a path to a text file.
    pub corpus: String,
    /// Text the backbone is pretrained on before adapters are attached.
    pub pretrain_corpus: String,
    pub out_dir: PathBuf,
    /// Record per-step wall-clock time in the metrics CSV. Off by default
    /// so repeated runs produce identical files.
    pub wall_clock: bool,
    pub pretrain_steps: u64,
    pub pretrain_lr: f64,
    pub arch: ArchSection,
    pub adapter: AdapterSection,
    pub optimizer: OptimizerSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchSection {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_mult: usize,
    pub max_seq_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterSection {
    pub rank: usize,
    pub prefix_len: usize,
    pub depth: usize,
    pub sora_lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    /// `adam` or `sgd`.
    pub kind: String,
    /// Defaults to 1e-4 for full tuning and 1e-3 otherwise.
    pub lr: Option<f64>,
    pub betas: [f64; 2],
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::new(Method::Qaa);
        Self {
            method: "qaa".into(),
            seed: t.seed,
            steps: t.steps,
            batch_size: t.batch_size,
            seq_len: t.seq_len,
            corpus: "copy".into(),
            pretrain_corpus: "builtin".into(),
            out_dir: PathBuf::from("runs"),
            wall_clock: false,
            pretrain_steps: t.pretrain_steps,
            pretrain_lr: t.pretrain_lr,
            arch: ArchSection::default(),
            adapter: AdapterSection::default(),
            optimizer: OptimizerSection::default(),
        }
    }
}

impl Default for ArchSection {
    fn default() -> Self {
        let a = ArchSpec::default();
        Self {
            vocab_size: a.vocab_size,
            d_model: a.d_model,
            n_layers: a.n_layers,
            n_heads: a.n_heads,
            ffn_mult: a.ffn_mult,
            max_seq_len: a.max_seq_len,
        }
    }
}

impl Default for AdapterSection {
    fn default() -> Self {
        let a = AdapterConfig::default();
        Self {
            rank: a.rank,
            prefix_len: a.prefix_len,
            depth: a.depth,
            sora_lambda: a.sora_lambda,
        }
    }
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let o = OptimizerConfig::adam(0.0);
        Self {
            kind: "adam".into(),
            lr: None,
            betas: [o.beta1, o.beta2],
            eps: o.eps,
            weight_decay: o.weight_decay,
        }
    }
}

impl RunConfig {
    /// Reads and parses `path`, resolving relative paths against its directory.
    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for c in [&mut cfg.corpus, &mut cfg.pretrain_corpus] {
            if let CorpusSource::File(p) = CorpusSource::parse(c) {
                if p.is_relative() {
                    *c = base.join(p).to_string_lossy().into_owned();
                }
            }
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    /// Parses TOML text; the error is a single line.
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().replace('\n', " ");
            match e.span() {
                Some(span) => {
                    let line = text[..span.start].matches('\n').count() + 1;
                    format!("line {line}: {msg}")
                }
                None => msg,
            }
        })
    }

    pub fn method(&self) -> AppResult<Method> {
        self.method.parse().map_err(AppError::config)
    }

    pub fn corpus_source(&self) -> CorpusSource {
        CorpusSource::parse(&self.corpus)
    }

    pub fn pretrain_corpus_source(&self) -> CorpusSource {
        CorpusSource::parse(&self.pretrain_corpus)
    }

    /// The validated core training configuration.
    pub fn train_config(&self) -> AppResult<TrainConfig> {
        let method = self.method()?;
        let kind = match self.optimizer.kind.as_str() {
            "adam" => OptimizerKind::Adam,
            "sgd" => OptimizerKind::Sgd,
            other => {
                return Err(AppError::Config(format!(
                    "unknown optimizer kind {other:?}; expected adam or sgd"
                )))
            }
        };
        let a = &self.arch;
        let cfg = TrainConfig {
            method,
            arch: ArchSpec {
                vocab_size: a.vocab_size,
                d_model: a.d_model,
                n_layers: a.n_layers,
                n_heads: a.n_heads,
                ffn_mult: a.ffn_mult,
                max_seq_len: a.max_seq_len,
            },
            adapter: AdapterConfig {
                rank: self.adapter.rank,
                prefix_len: self.adapter.prefix_len,
                depth: self.adapter.depth,
                sora_lambda: self.adapter.sora_lambda,
            },
            optimizer: OptimizerConfig {
                kind,
                lr: self.optimizer.lr.unwrap_or_else(|| default_lr(method)),
                beta1: self.optimizer.betas[0],
                beta2: self.optimizer.betas[1],
                eps: self.optimizer.eps,
                weight_decay: self.optimizer.weight_decay,
            },
            steps: self.steps,
            batch_size: self.batch_size,
            seq_len: self.seq_len,
            seed: self.seed,
            pretrain_steps: self.pretrain_steps,
            pretrain_lr: self.pretrain_lr,
        };
        cfg.validate().map_err(AppError::config)?;
        if a.vocab_size < 256 {
            return Err(AppError::Config(format!(
                "vocab_size {} is smaller than the 256 byte tokens",
                a.vocab_size
            )));
        }
        Ok(cfg)
    }
}
