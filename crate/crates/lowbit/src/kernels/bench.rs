//! Microbenchmarks for the packed kernels against the float reference.

use super::gemm::{binary_gemm, dense_gemm, ternary_gemm};
use super::pack::pack;
use crate::quant::{Granularity, QuantKind, QuantScheme, QuantizedTensor};
use anyhow::{ensure, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;
use std::time::Instant;

/// Which multiply to time.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BenchOp {
    /// XNOR-popcount GEMM on packed ±1 operands.
    Binary,
    /// Masked-popcount GEMM on packed {-1,0,1} operands.
    Ternary,
    /// Naive dense float GEMM on the dequantized operands.
    Reference,
}

impl BenchOp {
    /// Stable lowercase name used in report rows.
    pub fn name(self) -> &'static str {
        match self {
            BenchOp::Binary => "binary",
            BenchOp::Ternary => "ternary",
            BenchOp::Reference => "reference",
        }
    }
}

/// One machine-readable benchmark result.
#[derive(Clone, Debug)]
pub struct BenchRow {
    pub op: BenchOp,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub repeats: usize,
    pub median_ns: u128,
    /// Effective billions of multiply-accumulate-equivalent ops per second
    /// (2·m·k·n ops per GEMM).
    pub gops: f64,
}

impl BenchRow {
    /// `key=value` line for logs and report files.
    pub fn to_line(&self) -> String {
        format!(
            "op={} m={} k={} n={} repeats={} median_ns={} gops={:.3}",
            self.op.name(),
            self.m,
            self.k,
            self.n,
            self.repeats,
            self.median_ns,
            self.gops
        )
    }
}

fn random_quant(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    kind: QuantKind,
) -> QuantizedTensor {
    let choices: &[i32] = match kind {
        QuantKind::BinaryWeight | QuantKind::BinaryActSigned => &[-1, 1],
        _ => &[-1, 0, 1],
    };
    let levels = (0..rows * cols)
        .map(|_| choices[rng.gen_range(0..choices.len())])
        .collect();
    let scheme = match kind {
        QuantKind::BinaryWeight | QuantKind::TernaryWeight => QuantScheme::weight(kind),
        k => QuantScheme::act(k),
    };
    let scales = match scheme.granularity {
        Granularity::PerRow => vec![0.5; rows],
        Granularity::PerTensor => vec![0.5],
    };
    QuantizedTensor {
        shape: vec![rows, cols],
        levels,
        alpha: scales.clone(),
        mu: vec![0.0; scales.len()],
        scheme,
    }
}

/// Times one GEMM shape: weights [m, k] times activations [n, k], `repeats`
/// runs, reporting the median wall time and effective throughput. Operand
/// construction and packing happen outside the timed region.
pub fn bench_gemm(op: BenchOp, m: usize, k: usize, n: usize, repeats: usize) -> Result<BenchRow> {
    ensure!(repeats > 0, "repeats must be positive");
    ensure!(m > 0 && k > 0 && n > 0, "benchmark shape must be nonzero");
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e3779b9);
    let (wkind, xkind) = match op {
        BenchOp::Binary => (QuantKind::BinaryWeight, QuantKind::BinaryActSigned),
        _ => (QuantKind::TernaryWeight, QuantKind::TernaryActSigned),
    };
    let qw = random_quant(&mut rng, m, k, wkind);
    let qx = random_quant(&mut rng, n, k, xkind);
    let mut times = Vec::with_capacity(repeats);
    match op {
        BenchOp::Reference => {
            let (a, b) = (qw.dequant(), qx.dequant());
            for _ in 0..repeats {
                let start = Instant::now();
                let out = dense_gemm(black_box(&a), black_box(&b));
                times.push(start.elapsed().as_nanos());
                black_box(out.data()[0]);
            }
        }
        BenchOp::Binary => {
            let (w, x) = (pack(&qw)?, pack(&qx)?);
            for _ in 0..repeats {
                let start = Instant::now();
                let out = binary_gemm(black_box(&w), black_box(&x));
                times.push(start.elapsed().as_nanos());
                black_box(out.data()[0]);
            }
        }
        BenchOp::Ternary => {
            let (w, x) = (pack(&qw)?, pack(&qx)?);
            for _ in 0..repeats {
                let start = Instant::now();
                let out = ternary_gemm(black_box(&w), black_box(&x));
                times.push(start.elapsed().as_nanos());
                black_box(out.data()[0]);
            }
        }
    }
    times.sort_unstable();
    let median_ns = times[times.len() / 2].max(1);
    let ops = 2.0 * m as f64 * k as f64 * n as f64;
    Ok(BenchRow {
        op,
        m,
        k,
        n,
        repeats,
        median_ns,
        gops: ops / median_ns as f64,
    })
}
