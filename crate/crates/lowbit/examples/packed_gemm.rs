//! Bit-packs ternary and binary operands, multiplies them with the
//! popcount kernels, verifies exact agreement with the float reference at
//! the integer level, and times both against a naive dense GEMM.
//!
//! Run with `cargo run --release --example packed_gemm`.

use anyhow::Result;
use lowbit::kernels::{bench_gemm, gemm_raw, pack, reference_gemm_levels, BenchOp};
use lowbit::quant::{maxent_binarize, maxent_ternarize, sign_binarize};
use lowbit::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // Deliberately non-multiple-of-64 K to exercise the padded tail words.
    let (m, k, n) = (48, 150, 33);
    let rand = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
        Tensor::new(
            &[rows, cols],
            (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
    };

    // Ternary weights x ternary activations.
    let qw = maxent_ternarize(&rand(m, k, &mut rng));
    let qx = maxent_ternarize(&rand(n, k, &mut rng));
    let raw = gemm_raw(&pack(&qw)?, &pack(&qx)?);
    let reference = reference_gemm_levels(&qw, &qx)?;
    assert_eq!(raw, reference, "popcount ternary GEMM must be exact");
    println!("ternary  {m}x{k} · {n}x{k}ᵀ: packed == reference ({} integer dots)", raw.len());

    // Binary weights x binary activations (the XNOR fast path).
    let qw = maxent_binarize(&rand(m, k, &mut rng));
    let qx = sign_binarize(&rand(n, k, &mut rng));
    let raw = gemm_raw(&pack(&qw)?, &pack(&qx)?);
    let reference = reference_gemm_levels(&qw, &qx)?;
    assert_eq!(raw, reference, "XNOR binary GEMM must be exact");
    println!("binary   {m}x{k} · {n}x{k}ᵀ: packed == reference ({} integer dots)", raw.len());

    // How fast? Multiplication-free kernels vs the dense float loop.
    println!("\ntiming 256x256x256 (median of 5):");
    let reference = bench_gemm(BenchOp::Reference, 256, 256, 256, 5)?;
    println!("  {}", reference.to_line());
    for op in [BenchOp::Ternary, BenchOp::Binary] {
        let row = bench_gemm(op, 256, 256, 256, 5)?;
        println!(
            "  {} speedup={:.1}x",
            row.to_line(),
            reference.median_ns as f64 / row.median_ns as f64
        );
    }
    Ok(())
}
