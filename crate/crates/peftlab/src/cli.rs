//! `peftlab` command-line interface.
//!
//! Exit codes: 0 success, 1 failed check or bench run, 2 configuration
//! error, 3 runtime error. Errors print as a single `error: ...` line on
//! stderr.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use peftlab_core::adapters::{count_trainable, AuditSpec, BackboneShape, Method};
use peftlab_core::model::Model;
use peftlab_core::trainkit::{byte_tokens, stream_rng, Stream};
use serde::Deserialize;

use crate::bench::{bench, render_summary, thread_limit};
use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{AppError, AppResult};
use crate::experiment::run_experiment;
use crate::gradcheck::{grad_check, GradCheckOptions};

#[derive(Debug, Parser)]
#[command(name = "peftlab", version, about = "Parameter-efficient fine-tuning lab with a quantum adapter")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one method and write its metrics CSV and checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's method.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare shift-rule gradients with finite differences.
    GradCheck {
        #[arg(long, default_value_t = 3)]
        qubits: usize,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print a method's trainable-parameter count and ratio.
    CountParams {
        /// `gpt-neo-125m` or a TOML file with the backbone dimensions.
        #[arg(long)]
        arch: String,
        #[arg(long)]
        method: String,
        #[arg(long, default_value_t = 4)]
        rank: usize,
        #[arg(long = "prefix-len", default_value_t = 4)]
        prefix_len: usize,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long, default_value_t = 2)]
        multiplicity: usize,
        /// QAA qubits; derived from the site width when omitted.
        #[arg(long)]
        qubits: Option<usize>,
    },
    /// Run every method × seed combination and write a summary table.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated method names.
        #[arg(long)]
        methods: String,
        /// Comma-separated seeds.
        #[arg(long, default_value = "0")]
        seeds: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy continuation of a prompt from a checkpoint.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long = "max-new-tokens", default_value_t = 32)]
        max_new_tokens: usize,
    },
}

/// Backbone dimensions file accepted by `count-params --arch PATH`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShapeFile {
    vocab_size: usize,
    d_model: usize,
    n_layers: usize,
    ffn_dim: usize,
    max_positions: usize,
}

fn arch_shape(arch: &str) -> AppResult<BackboneShape> {
    if arch == "gpt-neo-125m" {
        return Ok(BackboneShape::GPT_NEO_125M);
    }
    let path = Path::new(arch);
    let text = std::fs::read_to_string(path)
        .map_err(|_| AppError::Config(format!("unknown arch {arch:?}: not a preset (gpt-neo-125m) or readable file")))?;
    let s: ShapeFile = toml::from_str(&text)
        .map_err(|e| AppError::Config(format!("{arch}: {}", e.message().replace('\n', " "))))?;
    Ok(BackboneShape {
        vocab_size: s.vocab_size,
        d_model: s.d_model,
        n_layers: s.n_layers,
        ffn_dim: s.ffn_dim,
        max_positions: s.max_positions,
    })
}

fn parse_methods(list: &str) -> AppResult<Vec<Method>> {
    let methods = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<Method>().map_err(AppError::config))
        .collect::<AppResult<Vec<_>>>()?;
    if methods.is_empty() {
        return Err(AppError::Config("no methods given".into()));
    }
    Ok(methods)
}

fn parse_seeds(list: &str) -> AppResult<Vec<u64>> {
    let seeds = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<u64>().map_err(|_| AppError::Config(format!("invalid seed {s:?}"))))
        .collect::<AppResult<Vec<_>>>()?;
    if seeds.is_empty() {
        return Err(AppError::Config("no seeds given".into()));
    }
    Ok(seeds)
}

/// Runs a parsed command, writing normal output to `out`.
pub fn execute(cmd: Command, out: &mut dyn Write) -> AppResult<()> {
    let w = |e: std::io::Error| AppError::Runtime(format!("stdout: {e}"));
    match cmd {
        Command::Train {
            config,
            method,
            seed,
            out: out_dir,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(m) = method {
                cfg.method = m;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(d) = out_dir {
                cfg.out_dir = d;
            }
            let r = run_experiment(&cfg)?;
            writeln!(
                out,
                "method={} seed={} steps={} first_loss={} final_loss={} trainable_params={} csv={} checkpoint={}",
                r.method,
                r.seed,
                r.losses.len(),
                r.first_loss().map_or("na".into(), |l| l.to_string()),
                r.final_loss().map_or("na".into(), |l| l.to_string()),
                r.trainable_params,
                r.csv_path.display(),
                r.checkpoint_path.display()
            )
            .map_err(w)?;
        }
        Command::GradCheck {
            qubits,
            depth,
            trials,
            tol,
            seed,
        } => {
            let r = grad_check(&GradCheckOptions {
                qubits,
                depth,
                trials,
                tol,
                seed,
            })?;
            writeln!(out, "max_abs_deviation={:e} trials={trials} qubits={qubits} depth={depth}", r.max_deviation)
                .map_err(w)?;
            if !r.passed() {
                let wst = &r.worst;
                return Err(AppError::Check(format!(
                    "tolerance {tol:e} exceeded: deviation {:e} at trial {} observable i={} angle j={} theta={:?}",
                    wst.deviation, wst.trial, wst.i, wst.j, wst.theta
                )));
            }
        }
        Command::CountParams {
            arch,
            method,
            rank,
            prefix_len,
            depth,
            multiplicity,
            qubits,
        } => {
            let method: Method = method.parse().map_err(AppError::config)?;
            let backbone = arch_shape(&arch)?;
            let count = count_trainable(
                method,
                &AuditSpec {
                    backbone,
                    rank,
                    prefix_len,
                    depth,
                    qubits,
                    multiplicity,
                },
            )
            .map_err(AppError::config)?;
            writeln!(out, "{count}").map_err(w)?;
        }
        Command::Bench {
            config,
            methods,
            seeds,
            out: out_dir,
        } => {
            let methods = parse_methods(&methods)?;
            let seeds = parse_seeds(&seeds)?;
            let mut cfg = RunConfig::load(&config)?;
            if let Some(d) = out_dir {
                cfg.out_dir = d;
            }
            let report = bench(&cfg, &methods, &seeds, thread_limit())?;
            write!(out, "{}", render_summary(&report.summary)).map_err(w)?;
            let failed: Vec<String> = report
                .failures()
                .map(|r| format!("{}/seed{}: {}", r.method, r.seed, r.result.as_ref().unwrap_err()))
                .collect();
            if !failed.is_empty() {
                return Err(AppError::Check(format!("{} run(s) failed: {}", failed.len(), failed.join("; "))));
            }
        }
        Command::Generate {
            config,
            checkpoint: ckpt,
            prompt,
            max_new_tokens,
        } => {
            let records = checkpoint::load(&ckpt)?;
            let method = checkpoint::method_of(&records).map_err(|e| AppError::Config(format!("{}: {e}", ckpt.display())))?;
            let mut cfg = RunConfig::load(&config)?;
            cfg.method = method.name().into();
            let tc = cfg.train_config()?;
            let mut rng = stream_rng(tc.seed, Stream::AdapterInit);
            let mut model = Model::new(tc.arch, method, tc.adapter, &mut rng).map_err(AppError::config)?;
            checkpoint::apply_records(&mut model, &records)
                .map_err(|e| AppError::Config(format!("{}: {e}", ckpt.display())))?;
            let tokens = model
                .generate(&byte_tokens(prompt.as_bytes()), max_new_tokens)
                .map_err(AppError::config)?;
            let bytes: Vec<u8> = tokens.iter().map(|&t| u8::try_from(t).unwrap_or(b'?')).collect();
            writeln!(out, "{}", String::from_utf8_lossy(&bytes)).map_err(w)?;
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let rendered = e.to_string();
            let line = rendered.lines().next().unwrap_or("error: invalid arguments");
            let _ = writeln!(err, "{line}");
            return 2;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}
