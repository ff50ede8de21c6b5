//! Run configuration: one flat struct covering architecture, task, and
//! training budget, serialized as `key=value` lines with dotted keys.
//!
//! The same codec backs config files, checkpoint headers, and command-line
//! `--set key=value` overrides, so every knob is reachable from all three.

use crate::model::{Ablation, KdConfig, ModelConfig};
use crate::tasks::{TaskKind, TaskSpec};
use anyhow::{bail, ensure, Context, Result};
use std::path::{Path, PathBuf};

/// Everything one training or evaluation run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub task: TaskSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Training-set size; pairs are generated from `task.seed`.
    pub train_pairs: usize,
    /// Held-out evaluation-set size (disjoint seed).
    pub eval_pairs: usize,
    /// Per-epoch validation-set size used for logging and early stopping.
    pub val_pairs: usize,
    /// Stop once validation sequence accuracy reaches this; 0 disables.
    pub early_stop: f64,
    pub kd: KdConfig,
    pub ablation: Ablation,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// Full-precision teacher defaults at desk scale.
    pub fn desk_teacher() -> Self {
        RunConfig {
            model: ModelConfig::desk_default(),
            task: TaskSpec {
                kind: TaskKind::Copy,
                vocab_size: 64,
                min_len: 4,
                max_len: 30,
                seed: 11,
            },
            epochs: 30,
            batch_size: 64,
            lr: 3e-4,
            train_pairs: 20_000,
            eval_pairs: 512,
            val_pairs: 64,
            early_stop: 0.995,
            kd: KdConfig {
                lambda_kd: 0.0,
                lambda_h: 0.0,
                temperature: 2.0,
            },
            ablation: Ablation::Both,
            seed: 7,
            output_dir: PathBuf::from("runs/teacher"),
        }
    }

    /// Quantized-student defaults: ternary everywhere, distillation on, and
    /// the higher learning rate low-bit activations want.
    pub fn desk_student() -> Self {
        let mut cfg = RunConfig::desk_teacher();
        cfg.model = cfg.model.with_bits(2, 2, 2);
        cfg.lr = 5e-4;
        cfg.kd = KdConfig::default();
        cfg.output_dir = PathBuf::from("runs/student");
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.task.fits(self.model.max_seq_len)?;
        ensure!(
            self.task.vocab_size <= self.model.vocab_size,
            "task vocab {} exceeds model vocab {}",
            self.task.vocab_size,
            self.model.vocab_size
        );
        ensure!(self.epochs >= 1, "epochs must be at least 1");
        ensure!(self.batch_size >= 1, "batch_size must be at least 1");
        ensure!(self.lr > 0.0, "lr must be positive, got {}", self.lr);
        ensure!(self.train_pairs >= 1, "train_pairs must be at least 1");
        ensure!(self.eval_pairs >= 1, "eval_pairs must be at least 1");
        ensure!(self.val_pairs >= 1, "val_pairs must be at least 1");
        ensure!(
            (0.0..=1.0).contains(&self.early_stop),
            "early_stop must lie in [0, 1]"
        );
        ensure!(self.kd.temperature > 0.0, "kd.temperature must be positive");
        ensure!(
            self.kd.lambda_kd >= 0.0 && self.kd.lambda_h >= 0.0,
            "kd weights must be nonnegative"
        );
        Ok(())
    }

    /// Canonical `key=value` serialization; parses back via [`apply`].
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.task;
        format!(
            "model.vocab_size={}\nmodel.d_model={}\nmodel.n_heads={}\n\
             model.n_enc_layers={}\nmodel.n_dec_layers={}\nmodel.d_ffn={}\n\
             model.max_seq_len={}\nmodel.bits={}-{}-{}\nmodel.dropout={}\n\
             task.kind={}\ntask.vocab_size={}\ntask.min_len={}\ntask.max_len={}\n\
             task.seed={}\nepochs={}\nbatch_size={}\nlr={}\ntrain_pairs={}\n\
             eval_pairs={}\nval_pairs={}\nearly_stop={}\nkd.lambda_kd={}\n\
             kd.lambda_h={}\nkd.temperature={}\nablation={}\nseed={}\noutput_dir={}\n",
            m.vocab_size,
            m.d_model,
            m.n_heads,
            m.n_enc_layers,
            m.n_dec_layers,
            m.d_ffn,
            m.max_seq_len,
            m.bits_embed,
            m.bits_weight,
            m.bits_act,
            m.dropout,
            t.kind.name(),
            t.vocab_size,
            t.min_len,
            t.max_len,
            t.seed,
            self.epochs,
            self.batch_size,
            self.lr,
            self.train_pairs,
            self.eval_pairs,
            self.val_pairs,
            self.early_stop,
            self.kd.lambda_kd,
            self.kd.lambda_h,
            self.kd.temperature,
            self.ablation.name(),
            self.seed,
            self.output_dir.display(),
        )
    }

    /// Sets one dotted key. Unknown keys and unparseable values are errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: std::error::Error + Send + Sync + 'static,
        {
            value
                .parse::<T>()
                .with_context(|| format!("bad value {value:?} for key {key:?}"))
        }
        match key {
            "model.vocab_size" => self.model.vocab_size = num(key, value)?,
            "model.d_model" => self.model.d_model = num(key, value)?,
            "model.n_heads" => self.model.n_heads = num(key, value)?,
            "model.n_enc_layers" => self.model.n_enc_layers = num(key, value)?,
            "model.n_dec_layers" => self.model.n_dec_layers = num(key, value)?,
            "model.d_ffn" => self.model.d_ffn = num(key, value)?,
            "model.max_seq_len" => self.model.max_seq_len = num(key, value)?,
            "model.bits" => {
                let (e, w, a) = parse_bits(value)?;
                self.model = self.model.clone().with_bits(e, w, a);
            }
            "model.dropout" => self.model.dropout = num(key, value)?,
            "task.kind" => self.task.kind = TaskKind::parse(value)?,
            "task.vocab_size" => self.task.vocab_size = num(key, value)?,
            "task.min_len" => self.task.min_len = num(key, value)?,
            "task.max_len" => self.task.max_len = num(key, value)?,
            "task.seed" => self.task.seed = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "train_pairs" => self.train_pairs = num(key, value)?,
            "eval_pairs" => self.eval_pairs = num(key, value)?,
            "val_pairs" => self.val_pairs = num(key, value)?,
            "early_stop" => self.early_stop = num(key, value)?,
            "kd.lambda_kd" => self.kd.lambda_kd = num(key, value)?,
            "kd.lambda_h" => self.kd.lambda_h = num(key, value)?,
            "kd.temperature" => self.kd.temperature = num(key, value)?,
            "ablation" => self.ablation = Ablation::parse(value)?,
            "seed" => self.seed = num(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    /// Applies every `key=value` line; `#` lines and blanks are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected key=value, got {line:?}", i + 1))?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies a config file on top of `self`.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        self.apply_text(&text)
            .with_context(|| format!("in config file {}", path.display()))
    }

    pub fn from_text(text: &str, base: RunConfig) -> Result<RunConfig> {
        let mut cfg = base;
        cfg.apply_text(text)?;
        Ok(cfg)
    }
}

/// Parses an `E-W-A` bit triple such as `2-2-2` or `32-32-32`.
pub fn parse_bits(s: &str) -> Result<(u8, u8, u8)> {
    let parts: Vec<&str> = s.split('-').collect();
    ensure!(
        parts.len() == 3,
        "bits must be an E-W-A triple like 2-2-2, got {s:?}"
    );
    let one = |p: &str| -> Result<u8> {
        let b: u8 = p
            .parse()
            .with_context(|| format!("bad bit width {p:?} in {s:?}"))?;
        ensure!(matches!(b, 1 | 2 | 8 | 32), "bit width must be 1, 2, 8, or 32, got {b}");
        Ok(b)
    };
    Ok((one(parts[0])?, one(parts[1])?, one(parts[2])?))
}
