//! `lowbit`: train, distill, evaluate, report on, export, and benchmark
//! low-bit encoder-decoder models. All heavy lifting lives in the library;
//! this binary only parses arguments and resolves configuration layers
//! (defaults, then `--config` file, then `--set key=value`, then dedicated
//! flags).

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use lowbit::cli::{commands, RunConfig};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "lowbit",
    version,
    about = "Ternary/binary quantization-aware training and packed inference \
             for small encoder-decoder transformers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the full-precision teacher and write a checkpoint.
    TrainTeacher {
        /// Config file of key=value lines applied over the teacher defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Individual overrides, e.g. --set model.d_model=128.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (checkpoint, config.txt, metrics.log).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distill a quantized student from a teacher checkpoint.
    TrainStudent {
        /// Teacher checkpoint to initialize and distill from.
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Bit widths as an E-W-A triple, e.g. 2-2-2 or 1-1-1.
        #[arg(long)]
        bits: Option<String>,
        /// Quantizer ablation: both, weight-only, act-only, or baseline.
        #[arg(long)]
        ablation: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on its task's held-out stream.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Held-out pairs to decode (default: the checkpoint's eval_pairs).
        #[arg(long)]
        pairs: Option<usize>,
        /// Directory for eval.tsv (default: beside the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump level proportions, entropies, and weight histograms.
    ReportHist {
        #[arg(long)]
        ckpt: PathBuf,
        /// Directory for entropy.tsv and hist.tsv (default: the
        /// checkpoint's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Quantize and pack a checkpoint into the deployment file format.
    ExportPacked {
        #[arg(long)]
        ckpt: PathBuf,
        /// Destination file for the packed model.
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the packed GEMM kernels against the float reference.
    Bench {
        /// Square GEMM sizes to time.
        #[arg(long, num_args = 1.., default_values_t = [256, 512])]
        size: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
}

/// Layers overrides onto a base config in increasing precedence.
fn resolve(
    base: RunConfig,
    config: Option<&Path>,
    sets: &[String],
    bits: Option<&str>,
    ablation: Option<&str>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<RunConfig> {
    let mut cfg = base;
    if let Some(path) = config {
        cfg.apply_file(path)?;
    }
    for kv in sets {
        let (key, value) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.apply(key.trim(), value.trim())?;
    }
    if let Some(bits) = bits {
        cfg.apply("model.bits", bits)?;
    }
    if let Some(ablation) = ablation {
        cfg.apply("ablation", ablation)?;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(out) = out {
        cfg.output_dir = out.to_path_buf();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::TrainTeacher {
            config,
            sets,
            seed,
            out,
        } => {
            let cfg = resolve(
                RunConfig::desk_teacher(),
                config.as_deref(),
                &sets,
                None,
                None,
                seed,
                out.as_deref(),
            )?;
            commands::cmd_train_teacher(&cfg)?;
        }
        Command::TrainStudent {
            teacher,
            config,
            sets,
            bits,
            ablation,
            seed,
            out,
        } => {
            let cfg = resolve(
                RunConfig::desk_student(),
                config.as_deref(),
                &sets,
                bits.as_deref(),
                ablation.as_deref(),
                seed,
                out.as_deref(),
            )?;
            commands::cmd_train_student(&cfg, &teacher)?;
        }
        Command::Eval { ckpt, pairs, out } => {
            commands::cmd_eval(&ckpt, pairs, out.as_deref())?;
        }
        Command::ReportHist { ckpt, out } => {
            commands::cmd_report_hist(&ckpt, out.as_deref())?;
        }
        Command::ExportPacked { ckpt, out } => {
            commands::cmd_export_packed(&ckpt, &out)?;
        }
        Command::Bench { size, repeats } => {
            commands::cmd_bench(&size, repeats)?;
        }
    }
    Ok(())
}
