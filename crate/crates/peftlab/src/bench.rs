//! Method × seed cross-product runs with a summary table.
//!
//! Backbones are pretrained once per seed and shared by every method for
//! that seed. Runs execute on up to `threads` scoped worker threads; a
//! failing run is recorded and the rest continue.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use peftlab_core::adapters::Method;
use peftlab_core::model::Model;
use peftlab_core::trainkit::{pretrain_backbone, TrainConfig};

use crate::config::RunConfig;
use crate::error::{AppError, AppResult};
use crate::experiment::{run_with_backbone, RunReport};

pub const SUMMARY_HEADER: &str =
    "method,runs,failed,first_loss_mean,final_loss_mean,final_loss_std,trainable_params,wall_ms_mean";

/// Worker cap: `PEFTLAB_THREADS` if set to a positive integer, otherwise
/// the available parallelism.
pub fn thread_limit() -> usize {
    std::env::var("PEFTLAB_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Debug)]
pub struct BenchRun {
    pub method: Method,
    pub seed: u64,
    pub result: AppResult<RunReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub runs: usize,
    pub failed: usize,
    pub first_loss_mean: f64,
    pub final_loss_mean: f64,
    /// Population standard deviation across seeds.
    pub final_loss_std: f64,
    pub trainable_params: usize,
    pub wall_ms_mean: f64,
}

#[derive(Debug)]
pub struct BenchReport {
    pub runs: Vec<BenchRun>,
    pub summary: Vec<SummaryRow>,
    pub summary_path: PathBuf,
}

impl BenchReport {
    pub fn failures(&self) -> impl Iterator<Item = &BenchRun> {
        self.runs.iter().filter(|r| r.result.is_err())
    }

    pub fn summary_for(&self, method: Method) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.method == method)
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs `f` over `items` on up to `threads` workers; results keep input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = threads.clamp(1, items.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap().expect("every slot filled")).collect()
}

/// Validates every (method, seed) configuration, then runs the cross-product.
pub fn bench(cfg: &RunConfig, methods: &[Method], seeds: &[u64], threads: usize) -> AppResult<BenchReport> {
    if methods.is_empty() {
        return Err(AppError::Config("no methods given".into()));
    }
    if seeds.is_empty() {
        return Err(AppError::Config("no seeds given".into()));
    }
    let mut jobs: Vec<(RunConfig, TrainConfig)> = Vec::new();
    for &seed in seeds {
        for &method in methods {
            let mut c = cfg.clone();
            c.method = method.name().into();
            c.seed = seed;
            let tc = c.train_config()?;
            jobs.push((c, tc));
        }
    }
    let tokens = cfg.corpus_source().load()?;
    let pretrain_tokens = cfg.pretrain_corpus_source().load()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| AppError::io(&cfg.out_dir, e))?;

    // Any method's config pretrains the same backbone for a given seed.
    let pretrain_jobs: Vec<TrainConfig> = seeds
        .iter()
        .map(|&s| jobs.iter().find(|(_, t)| t.seed == s).unwrap().1)
        .collect();
    let backbones: Vec<Result<Model, String>> = parallel_map(&pretrain_jobs, threads, |tc| {
        pretrain_backbone(tc, &pretrain_tokens).map_err(|e| e.to_string())
    });

    let results = parallel_map(&jobs, threads, |(c, tc)| {
        let idx = seeds.iter().position(|&s| s == tc.seed).unwrap();
        match &backbones[idx] {
            Ok(bb) => run_with_backbone(c, tc, &tokens, bb),
            Err(e) => Err(AppError::Runtime(format!("pretraining failed: {e}"))),
        }
    });
    let runs: Vec<BenchRun> = jobs
        .iter()
        .zip(results)
        .map(|((_, tc), result)| BenchRun {
            method: tc.method,
            seed: tc.seed,
            result,
        })
        .collect();

    let mut summary = Vec::new();
    for &method in methods {
        let mine: Vec<&BenchRun> = runs.iter().filter(|r| r.method == method).collect();
        let ok: Vec<&RunReport> = mine.iter().filter_map(|r| r.result.as_ref().ok()).collect();
        let finals: Vec<f64> = ok.iter().filter_map(|r| r.final_loss()).collect();
        let firsts: Vec<f64> = ok.iter().filter_map(|r| r.first_loss()).collect();
        let (final_mean, final_std) = mean_std(&finals);
        let walls: Vec<f64> = ok.iter().map(|r| r.wall_ms).collect();
        summary.push(SummaryRow {
            method,
            runs: mine.len(),
            failed: mine.len() - ok.len(),
            first_loss_mean: mean_std(&firsts).0,
            final_loss_mean: final_mean,
            final_loss_std: final_std,
            trainable_params: ok.first().map_or(0, |r| r.trainable_params),
            wall_ms_mean: mean_std(&walls).0,
        });
    }
    let summary_path = cfg.out_dir.join("summary.csv");
    std::fs::write(&summary_path, render_summary(&summary)).map_err(|e| AppError::io(&summary_path, e))?;
    Ok(BenchReport {
        runs,
        summary,
        summary_path,
    })
}

pub fn render_summary(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{:.1}",
            r.method,
            r.runs,
            r.failed,
            r.first_loss_mean,
            r.final_loss_mean,
            r.final_loss_std,
            r.trainable_params,
            r.wall_ms_mean
        )
        .unwrap();
    }
    out
}
