//! The training loops: plain cross-entropy for the full-precision teacher,
//! distillation for quantized students, with per-epoch structured metrics.
//!
//! Gradients are accumulated per sequence and averaged over the batch, so a
//! batch is one optimizer step regardless of sequence lengths. Students are
//! initialized from the teacher and calibrate their activation scales on the
//! first batch before any step is taken.

use super::config::RunConfig;
use crate::graph::{add_tensors, Graph};
use crate::model::{distill_loss, ForwardCtx, KdConfig, Mode, Model};
use crate::optim::{Adam, AdamConfig};
use crate::tasks::{evaluate, generate, teacher_forcing, TaskSpec};
use crate::tensor::Tensor;
use anyhow::{ensure, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Validation pairs use the training seed plus this offset.
pub const VAL_SEED_OFFSET: u64 = 1;
/// Held-out evaluation pairs use the training seed plus this offset.
pub const HELDOUT_SEED_OFFSET: u64 = 2;

/// The task with its seed shifted to the held-out evaluation stream.
pub fn held_out_task(task: &TaskSpec) -> TaskSpec {
    TaskSpec {
        seed: task.seed + HELDOUT_SEED_OFFSET,
        ..*task
    }
}

/// One epoch of structured metrics; `to_line` is the log format.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    /// Mean per-sequence loss over the epoch.
    pub loss: f64,
    /// Teacher-forced argmax accuracy on the training pairs.
    pub train_token_acc: f64,
    /// Greedy-decode accuracies on the validation pairs.
    pub val_token_acc: f64,
    pub val_seq_acc: f64,
}

impl EpochRow {
    /// `key=value` row written to stdout and `metrics.log`.
    pub fn to_line(&self) -> String {
        format!(
            "epoch={} loss={:.6} train_token_acc={:.4} val_token_acc={:.4} val_seq_acc={:.4}",
            self.epoch, self.loss, self.train_token_acc, self.val_token_acc, self.val_seq_acc
        )
    }
}

/// Trains a full-precision teacher with plain cross-entropy.
pub fn train_teacher(cfg: &RunConfig, on_epoch: &mut dyn FnMut(&EpochRow)) -> Result<Model> {
    ensure!(
        cfg.model.is_full_precision(),
        "the teacher must be full precision (32-32-32), got {}-{}-{}",
        cfg.model.bits_embed,
        cfg.model.bits_weight,
        cfg.model.bits_act
    );
    let mut model = Model::new(cfg.model.clone(), cfg.ablation, cfg.seed)?;
    train_loop(&mut model, None, cfg, on_epoch)?;
    Ok(model)
}

/// Initializes a student from the teacher and trains it with the
/// distillation objective.
pub fn train_student(
    cfg: &RunConfig,
    teacher: &Model,
    on_epoch: &mut dyn FnMut(&EpochRow),
) -> Result<Model> {
    let mut student = Model::new(cfg.model.clone(), cfg.ablation, cfg.seed)?;
    student.init_from(teacher)?;
    train_loop(&mut student, Some(teacher), cfg, on_epoch)?;
    Ok(student)
}

fn train_loop(
    model: &mut Model,
    teacher: Option<&Model>,
    cfg: &RunConfig,
    on_epoch: &mut dyn FnMut(&EpochRow),
) -> Result<Vec<EpochRow>> {
    cfg.validate()?;
    let pairs = generate(&cfg.task, cfg.train_pairs);
    let val_task = TaskSpec {
        seed: cfg.task.seed + VAL_SEED_OFFSET,
        ..cfg.task
    };
    let val = generate(&val_task, cfg.val_pairs);
    let kd = match teacher {
        Some(_) => cfg.kd,
        None => KdConfig {
            lambda_kd: 0.0,
            lambda_h: 0.0,
            temperature: 1.0,
        },
    };

    // Elastic activation scales start from data statistics: one pass over
    // the first batch in calibration mode, then the averages are committed.
    if model.config.bits_act != 32 && model.ablation.elastic_acts() {
        let ctx = ForwardCtx::new(Mode::Calibrate);
        for pair in pairs.iter().take(cfg.batch_size) {
            let (tgt_in, _) = teacher_forcing(&pair.tgt);
            let mut g = Graph::new();
            let bound = model.params.bind(&mut g);
            model.forward(&mut g, &ctx, &bound, &pair.src, &tgt_in);
        }
        model.commit_calibration(&ctx);
    }

    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr), &model.params);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x517c_c1b7));
    let mut rows = Vec::new();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let (mut hits, mut total) = (0usize, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Vec<Option<Tensor>> = vec![None; model.params.len()];
            for &i in batch {
                let pair = &pairs[i];
                let (tgt_in, labels) = teacher_forcing(&pair.tgt);
                let ctx = if model.config.dropout > 0.0 {
                    let salt = (epoch as u64) << 32 | i as u64;
                    ForwardCtx::train_with_dropout(cfg.seed.wrapping_add(salt))
                } else {
                    ForwardCtx::new(Mode::Train)
                };
                let mut g = Graph::new();
                let bound = model.params.bind(&mut g);
                let out = model.forward(&mut g, &ctx, &bound, &pair.src, &tgt_in);
                let loss = match teacher {
                    Some(t) => {
                        let signals = t.run_frozen(&pair.src, &tgt_in);
                        distill_loss(&mut g, &out, &signals, &labels, &kd)
                    }
                    None => g.cross_entropy(out.logits, &labels),
                };
                let loss_value = g.value(loss).item();
                ensure!(
                    loss_value.is_finite(),
                    "training diverged: loss {loss_value} at epoch {epoch} (lr {}); lower the learning rate",
                    cfg.lr
                );
                loss_sum += loss_value;

                let logits = g.value(out.logits);
                let cols = logits.cols();
                for (r, &want) in labels.iter().enumerate() {
                    let row = &logits.data()[r * cols..(r + 1) * cols];
                    hits += (argmax(row) == want) as usize;
                }
                total += labels.len();

                let grads = g.backward(loss);
                for (slot, grad) in acc.iter_mut().zip(bound.collect_grads(&grads)) {
                    if let Some(grad) = grad {
                        *slot = Some(match slot.take() {
                            Some(prev) => add_tensors(&prev, &grad),
                            None => grad,
                        });
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            let mean_grads: Vec<Option<Tensor>> = acc
                .into_iter()
                .map(|g| g.map(|t| t.map(|v| v * inv)))
                .collect();
            opt.step(&mut model.params, &mean_grads);
        }

        let report = evaluate(model, &val);
        let row = EpochRow {
            epoch,
            loss: loss_sum / pairs.len() as f64,
            train_token_acc: hits as f64 / total as f64,
            val_token_acc: report.token_accuracy,
            val_seq_acc: report.sequence_accuracy,
        };
        on_epoch(&row);
        rows.push(row);
        if cfg.early_stop > 0.0 && report.sequence_accuracy >= cfg.early_stop {
            break;
        }
    }
    Ok(rows)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
