//! One training run: pretrain (or reuse) a backbone, train adapters, write
//! the metrics CSV and the final checkpoint.

use std::path::{Path, PathBuf};
use std::time::Instant;

use peftlab_core::adapters::Method;
use peftlab_core::model::Model;
use peftlab_core::trainkit::{pretrain_backbone, Session, TrainConfig};
use peftlab_core::Error as CoreError;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{AppError, AppResult};
use crate::metrics::{self, MetricsRow};

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub method: Method,
    pub seed: u64,
    /// Loss at every step, in order.
    pub losses: Vec<f64>,
    pub trainable_params: usize,
    /// Zeroed SoRA gate entries at the end of the run.
    pub zeroed_gates: usize,
    pub wall_ms: f64,
    pub csv_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

impl RunReport {
    pub fn first_loss(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// `<out>/<method>_seed<seed>.csv` and `.ckpt`.
pub fn run_paths(out_dir: &Path, method: Method, seed: u64) -> (PathBuf, PathBuf) {
    let stem = format!("{method}_seed{seed}");
    (out_dir.join(format!("{stem}.csv")), out_dir.join(format!("{stem}.ckpt")))
}

fn create_dir(dir: &Path) -> AppResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))
}

fn runtime(e: CoreError) -> AppError {
    match e {
        CoreError::NonFiniteLoss { step } => AppError::Runtime(format!("non-finite loss at step {step}")),
        other => AppError::runtime(other),
    }
}

/// Validates `cfg`, loads both corpora, pretrains the backbone and trains.
pub fn run_experiment(cfg: &RunConfig) -> AppResult<RunReport> {
    let tc = cfg.train_config()?;
    let tokens = cfg.corpus_source().load()?;
    let pretrain_tokens = cfg.pretrain_corpus_source().load()?;
    let backbone = pretrain_backbone(&tc, &pretrain_tokens).map_err(runtime)?;
    run_with_backbone(cfg, &tc, &tokens, &backbone)
}

/// Trains on top of an already pretrained backbone.
pub fn run_with_backbone(cfg: &RunConfig, tc: &TrainConfig, tokens: &[usize], backbone: &Model) -> AppResult<RunReport> {
    let mut session = Session::with_backbone(*tc, tokens, backbone).map_err(AppError::config)?;
    create_dir(&cfg.out_dir)?;
    let (csv_path, checkpoint_path) = run_paths(&cfg.out_dir, tc.method, tc.seed);
    let trainable = session.model.trainable_count();
    let mut rows = Vec::with_capacity(tc.steps as usize);
    let start = Instant::now();
    let mut failure = None;
    for _ in 0..tc.steps {
        let t0 = Instant::now();
        match session.step() {
            Ok(out) => rows.push(MetricsRow {
                step: out.step,
                loss: out.loss,
                ms: if cfg.wall_clock { t0.elapsed().as_secs_f64() * 1e3 } else { 0.0 },
                trainable_params: trainable,
                method: tc.method,
            }),
            Err(e) => {
                failure = Some(runtime(e));
                break;
            }
        }
    }
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    std::fs::write(&csv_path, metrics::render(&rows)).map_err(|e| AppError::io(&csv_path, e))?;
    if let Some(e) = failure {
        return Err(e);
    }
    checkpoint::save(&checkpoint_path, &session.model)?;
    Ok(RunReport {
        method: tc.method,
        seed: tc.seed,
        losses: rows.iter().map(|r| r.loss).collect(),
        trainable_params: trainable,
        zeroed_gates: session.zeroed_gates(),
        wall_ms,
        csv_path,
        checkpoint_path,
    })
}
