//! Trains a small full-precision teacher on the copy task and evaluates it
//! on held-out pairs — the first half of the quantization-aware recipe.
//!
//! Uses a reduced architecture so it finishes in well under a minute; the
//! `lowbit train-teacher` subcommand runs the full desk-scale default.
//!
//! Run with `cargo run --release --example train_teacher_copy`.

use anyhow::Result;
use lowbit::cli::train::{held_out_task, train_teacher};
use lowbit::cli::RunConfig;
use lowbit::tasks::{evaluate, generate, TaskKind, TaskSpec};

fn main() -> Result<()> {
    let mut cfg = RunConfig::desk_teacher();
    cfg.model.vocab_size = 16;
    cfg.model.d_model = 32;
    cfg.model.n_heads = 2;
    cfg.model.n_enc_layers = 1;
    cfg.model.n_dec_layers = 1;
    cfg.model.d_ffn = 64;
    cfg.model.max_seq_len = 12;
    cfg.task = TaskSpec {
        kind: TaskKind::Copy,
        vocab_size: 16,
        min_len: 2,
        max_len: 8,
        seed: 11,
    };
    cfg.epochs = 12;
    cfg.batch_size = 16;
    cfg.train_pairs = 768;
    cfg.val_pairs = 32;
    cfg.eval_pairs = 128;
    cfg.early_stop = 0.99;
    cfg.lr = 1e-3;

    println!("training a full-precision teacher on copy (vocab 16, len 2-8)...");
    let model = train_teacher(&cfg, &mut |row| println!("{}", row.to_line()))?;

    let report = evaluate(&model, &generate(&held_out_task(&cfg.task), cfg.eval_pairs));
    println!(
        "\nheld-out: token_accuracy={:.4} sequence_accuracy={:.4} \
         avg_gen_length={:.2} avg_ref_length={:.2}",
        report.token_accuracy,
        report.sequence_accuracy,
        report.avg_gen_length,
        report.avg_ref_length
    );
    Ok(())
}
