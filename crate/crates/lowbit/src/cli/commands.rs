//! The six subcommand implementations, shared by the binary and the
//! integration tests. Each takes parsed inputs, performs the work, prints
//! human-readable `key=value` lines, and writes its artifacts under the
//! configured output directory.

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::config::RunConfig;
use super::report::{entropy_report, histogram_report};
use super::train::{held_out_task, train_student, train_teacher, EpochRow};
use crate::kernels::{bench_gemm, BenchOp};
use crate::model::PackedModel;
use crate::tasks::{evaluate, generate, EvalReport};
use anyhow::{ensure, Context, Result};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Creates the output directory and returns a logger that mirrors epoch rows
/// to stdout and `metrics.log`.
fn epoch_logger(dir: &Path) -> Result<impl FnMut(&EpochRow)> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let mut log = fs::File::create(dir.join("metrics.log"))
        .with_context(|| format!("cannot write in {}", dir.display()))?;
    Ok(move |row: &EpochRow| {
        let line = row.to_line();
        println!("{line}");
        let _ = writeln!(log, "{line}");
    })
}

/// Trains the full-precision teacher; writes `config.txt`, `metrics.log`,
/// and `teacher.ckpt` under the output directory.
pub fn cmd_train_teacher(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let mut on_epoch = epoch_logger(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("config.txt"), cfg.to_text())?;
    let model = train_teacher(cfg, &mut on_epoch)?;
    let path = cfg.output_dir.join("teacher.ckpt");
    save_checkpoint(&path, cfg, &model)?;
    println!("checkpoint={}", path.display());
    Ok(path)
}

/// Distills a student from a teacher checkpoint; writes `student.ckpt` plus
/// a held-out evaluation report.
pub fn cmd_train_student(cfg: &RunConfig, teacher_ckpt: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let (_, teacher) = load_checkpoint(teacher_ckpt)?;
    let mut on_epoch = epoch_logger(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("config.txt"), cfg.to_text())?;
    let model = train_student(cfg, &teacher, &mut on_epoch)?;
    let path = cfg.output_dir.join("student.ckpt");
    save_checkpoint(&path, cfg, &model)?;

    let report = evaluate(&model, &generate(&held_out_task(&cfg.task), cfg.eval_pairs));
    print!("{}", report_summary(&report));
    fs::write(cfg.output_dir.join("eval.tsv"), report_table(&report))?;
    println!("checkpoint={}", path.display());
    Ok(path)
}

/// Evaluates a checkpoint on its task's held-out stream; prints the report
/// and writes `eval.tsv`.
pub fn cmd_eval(ckpt: &Path, pairs: Option<usize>, out: Option<&Path>) -> Result<EvalReport> {
    let (cfg, model) = load_checkpoint(ckpt)?;
    let n = pairs.unwrap_or(cfg.eval_pairs);
    let report = evaluate(&model, &generate(&held_out_task(&cfg.task), n));
    print!("{}", report_summary(&report));
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ckpt.parent().unwrap_or(Path::new(".")).to_path_buf());
    fs::create_dir_all(&dir)?;
    let path = dir.join("eval.tsv");
    fs::write(&path, report_table(&report))?;
    println!("report={}", path.display());
    Ok(report)
}

/// Writes `entropy.tsv` and `hist.tsv` for a checkpoint's quantized
/// matrices.
pub fn cmd_report_hist(ckpt: &Path, out: Option<&Path>) -> Result<()> {
    let (cfg, model) = load_checkpoint(ckpt)?;
    ensure!(
        !model.quantized_matrices().is_empty(),
        "model is fully full-precision; nothing to report"
    );
    let dir = out.map(Path::to_path_buf).unwrap_or(cfg.output_dir);
    fs::create_dir_all(&dir)?;
    let entropy = entropy_report(&model);
    fs::write(dir.join("entropy.tsv"), &entropy)?;
    fs::write(dir.join("hist.tsv"), histogram_report(&model, 64))?;
    let entropies: Vec<f64> = entropy
        .lines()
        .skip(1)
        .map(|l| l.rsplit('\t').next().unwrap().parse().unwrap())
        .collect();
    println!(
        "matrices={} mean_entropy_nats={:.4} entropy_file={} hist_file={}",
        entropies.len(),
        entropies.iter().sum::<f64>() / entropies.len() as f64,
        dir.join("entropy.tsv").display(),
        dir.join("hist.tsv").display()
    );
    Ok(())
}

/// Quantizes, packs, and writes the deployment file; prints payload sizes
/// and the compression ratio against a 32-bit serialization of the same
/// matrices. Returns the payload ratio.
pub fn cmd_export_packed(ckpt: &Path, out: &Path) -> Result<f64> {
    let (_, model) = load_checkpoint(ckpt)?;
    let packed = PackedModel::export(&model)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    packed.save(out)?;
    let packed_payload = packed.packed_payload_bytes();
    let dense_payload = packed.dense_payload_bytes();
    let file_bytes = fs::metadata(out)?.len();
    let ratio = dense_payload as f64 / packed_payload as f64;
    println!(
        "packed_file={} file_bytes={file_bytes} packed_payload_bytes={packed_payload} \
         dense_payload_bytes={dense_payload} payload_ratio={ratio:.2}",
        out.display()
    );
    Ok(ratio)
}

/// Times the packed kernels against the float reference at square shapes.
pub fn cmd_bench(sizes: &[usize], repeats: usize) -> Result<()> {
    for &n in sizes {
        let reference = bench_gemm(BenchOp::Reference, n, n, n, repeats)?;
        println!("{}", reference.to_line());
        for op in [BenchOp::Ternary, BenchOp::Binary] {
            let row = bench_gemm(op, n, n, n, repeats)?;
            let speedup = reference.median_ns as f64 / row.median_ns as f64;
            println!("{} speedup={speedup:.2}", row.to_line());
        }
    }
    Ok(())
}

/// Single-line-per-metric summary printed by eval-like commands.
fn report_summary(report: &EvalReport) -> String {
    format!(
        "token_accuracy={:.4} sequence_accuracy={:.4} avg_gen_length={:.2} avg_ref_length={:.2}\n",
        report.token_accuracy,
        report.sequence_accuracy,
        report.avg_gen_length,
        report.avg_ref_length
    )
}

/// Tab-separated metric table, including per-matrix entropies.
fn report_table(report: &EvalReport) -> String {
    let mut out = String::from("metric\tvalue\n");
    out.push_str(&format!("token_accuracy\t{}\n", report.token_accuracy));
    out.push_str(&format!("sequence_accuracy\t{}\n", report.sequence_accuracy));
    out.push_str(&format!("avg_gen_length\t{}\n", report.avg_gen_length));
    out.push_str(&format!("avg_ref_length\t{}\n", report.avg_ref_length));
    for (name, entropy) in &report.entropies {
        out.push_str(&format!("entropy.{name}\t{entropy}\n"));
    }
    out
}
