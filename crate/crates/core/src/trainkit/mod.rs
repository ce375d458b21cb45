//! Objective, optimizers, data and the training step.
//!
//! One step records every sequence of the batch on a single tape, averages
//! the per-sequence mean NLL, back-propagates (quantum nodes contribute
//! their cached parameter-shift Jacobians) and applies the optimizer to all
//! trainable tensors. SoRA gates skip the optimizer and instead take a
//! proximal gradient step with the same learning rate.
//!
//! All randomness derives from the run seed through separate ChaCha8
//! streams, so a [`TrainConfig`] fully determines the run.

mod data;
mod optim;

pub use data::{byte_tokens, copy_task, Batch, BatchSampler};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapters::{sora_proximal_step, AdapterConfig, Method};
use crate::error::{Error, Result};
use crate::model::{ArchSpec, Model};
use crate::tensor::{Tape, TapeStats, Var};

/// Mean negative log-likelihood over unmasked positions.
pub fn lm_loss(tape: &mut Tape, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
    tape.cross_entropy(logits, targets, mask)
}

/// Default learning rate: `1e-4` for full tuning, `1e-3` for adapters.
pub fn default_lr(method: Method) -> f64 {
    if method.trains_backbone() {
        1e-4
    } else {
        1e-3
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub arch: ArchSpec,
    pub adapter: AdapterConfig,
    pub optimizer: OptimizerConfig,
    pub steps: u64,
    pub batch_size: usize,
    pub seq_len: usize,
    pub seed: u64,
    /// Full-tuning steps that produce the frozen backbone.
    pub pretrain_steps: u64,
    pub pretrain_lr: f64,
}

impl TrainConfig {
    /// Desk-scale defaults for `method`.
    pub fn new(method: Method) -> Self {
        Self {
            method,
            arch: ArchSpec::default(),
            adapter: AdapterConfig::default(),
            optimizer: OptimizerConfig::adam(default_lr(method)),
            steps: 1000,
            batch_size: 4,
            seq_len: 24,
            seed: 0,
            pretrain_steps: 300,
            pretrain_lr: 3e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.adapter.validate()?;
        self.optimizer.validate()?;
        if self.batch_size == 0 || self.seq_len == 0 {
            return Err(Error::InvalidConfig("batch_size and seq_len must be at least 1".into()));
        }
        if !(self.pretrain_lr.is_finite() && self.pretrain_lr >= 0.0) {
            return Err(Error::InvalidConfig("pretrain_lr must be finite and non-negative".into()));
        }
        let prefix = if self.method == Method::Prefix {
            self.adapter.prefix_len
        } else {
            0
        };
        if self.seq_len + prefix > self.arch.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: self.seq_len + prefix,
                max: self.arch.max_seq_len,
            });
        }
        Ok(())
    }
}

/// RNG streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    BackboneInit = 0,
    PretrainData = 1,
    AdapterInit = 2,
    TrainData = 3,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// 1-based step index.
    pub step: u64,
    /// Batch mean of `seq_losses`.
    pub loss: f64,
    pub seq_losses: Vec<f64>,
    pub stats: TapeStats,
}

/// Records the batch on `tape`; returns the mean loss node and each
/// sequence's loss value.
pub fn batch_loss(tape: &mut Tape, model: &Model, batch: &Batch) -> Result<(Var, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    let mut total: Option<Var> = None;
    let mut per_seq = Vec::with_capacity(batch.len());
    for (x, y) in batch.inputs.iter().zip(&batch.targets) {
        let logits = model.forward(tape, x)?;
        let mask = vec![true; y.len()];
        let l = lm_loss(tape, logits, y, &mask)?;
        per_seq.push(tape.value(l)[0]);
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l)?,
        });
    }
    let mean = tape.scale(total.expect("non-empty batch"), 1.0 / batch.len() as f64);
    Ok((mean, per_seq))
}

/// Forward, backward and update for one batch.
pub fn train_step(
    model: &mut Model,
    optimizer: &mut Optimizer,
    sora_lambda: f64,
    step: u64,
    batch: &Batch,
) -> Result<StepOutcome> {
    let mut tape = Tape::new();
    let (loss_var, seq_losses) = batch_loss(&mut tape, model, batch)?;
    let loss = tape.value(loss_var)[0];
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step });
    }
    let grads = tape.backward(loss_var)?;
    let gates = model.sora_gates();
    optimizer.step(&mut model.store, &grads, &gates);
    for g in gates {
        let current = model.store.get(g).data().to_vec();
        let zero = vec![0.0; current.len()];
        let grad = grads.param(g).unwrap_or(&zero);
        let next = sora_proximal_step(&current, grad, optimizer.config.lr, sora_lambda);
        model.store.get_mut(g).data_mut().copy_from_slice(&next);
    }
    Ok(StepOutcome {
        step,
        loss,
        seq_losses,
        stats: tape.stats(),
    })
}

/// Per-sequence losses without updating anything.
pub fn evaluate(model: &Model, batch: &Batch) -> Result<Vec<f64>> {
    let mut tape = Tape::inference();
    Ok(batch_loss(&mut tape, model, batch)?.1)
}

/// The frozen backbone for a run: a full-tuning model trained for
/// `pretrain_steps` on `tokens`. Depends on the seed but not the method.
pub fn pretrain_backbone(cfg: &TrainConfig, tokens: &[usize]) -> Result<Model> {
    cfg.validate()?;
    let mut model = Model::new(
        cfg.arch,
        Method::Full,
        cfg.adapter,
        &mut stream_rng(cfg.seed, Stream::BackboneInit),
    )?;
    let mut sampler = BatchSampler::new(
        tokens.to_vec(),
        cfg.seq_len,
        cfg.batch_size,
        stream_rng(cfg.seed, Stream::PretrainData),
    )?;
    let mut opt = Optimizer::new(OptimizerConfig::adam(cfg.pretrain_lr));
    for step in 1..=cfg.pretrain_steps {
        let batch = sampler.next_batch();
        train_step(&mut model, &mut opt, 0.0, step, &batch)?;
    }
    Ok(model)
}

/// A training run in progress.
#[derive(Debug, Clone)]
pub struct Session {
    pub config: TrainConfig,
    pub model: Model,
    pub optimizer: Optimizer,
    sampler: BatchSampler,
    step: u64,
}

impl Session {
    /// Pretrains a backbone, then attaches fresh adapters.
    pub fn new(cfg: TrainConfig, tokens: &[usize]) -> Result<Self> {
        let backbone = pretrain_backbone(&cfg, tokens)?;
        Self::with_backbone(cfg, tokens, &backbone)
    }

    /// Uses the backbone weights of `pretrained`.
    pub fn with_backbone(cfg: TrainConfig, tokens: &[usize], pretrained: &Model) -> Result<Self> {
        cfg.validate()?;
        if pretrained.arch != cfg.arch {
            return Err(Error::InvalidConfig(format!(
                "backbone architecture {:?} does not match {:?}",
                pretrained.arch, cfg.arch
            )));
        }
        let model = Model::with_backbone(
            pretrained,
            cfg.method,
            cfg.adapter,
            &mut stream_rng(cfg.seed, Stream::AdapterInit),
        )?;
        let sampler = BatchSampler::new(
            tokens.to_vec(),
            cfg.seq_len,
            cfg.batch_size,
            stream_rng(cfg.seed, Stream::TrainData),
        )?;
        Ok(Self {
            config: cfg,
            model,
            optimizer: Optimizer::new(cfg.optimizer),
            sampler,
            step: 0,
        })
    }

    /// Steps completed so far.
    pub fn steps_done(&self) -> u64 {
        self.step
    }

    /// Draws the next batch and trains on it.
    pub fn step(&mut self) -> Result<StepOutcome> {
        let batch = self.sampler.next_batch();
        self.train_on(&batch)
    }

    /// Trains on a caller-supplied batch.
    pub fn train_on(&mut self, batch: &Batch) -> Result<StepOutcome> {
        let out = train_step(
            &mut self.model,
            &mut self.optimizer,
            self.config.adapter.sora_lambda,
            self.step + 1,
            batch,
        )?;
        self.step += 1;
        Ok(out)
    }

    /// Zero gate entries across all SoRA sites.
    pub fn zeroed_gates(&self) -> usize {
        self.model
            .sora_gates()
            .iter()
            .map(|g| self.model.store.get(*g).data().iter().filter(|v| **v == 0.0).count())
            .sum()
    }
}
