//! Bit-packed storage and multiplication-free matrix multiply.
//!
//! Quantized matrices are stored as one-bit planes, 64 elements per word,
//! and multiplied with XOR/AND + popcount instead of floating-point
//! multiplies. A float reference oracle and microbenchmarks live alongside
//! so every packed result can be checked exactly and timed.

mod bench;
mod gemm;
mod pack;

pub use bench::{bench_gemm, BenchOp, BenchRow};
pub use gemm::{binary_gemm, gemm_raw, reference_gemm, reference_gemm_levels, ternary_gemm};
pub use pack::{pack, PackScheme, PackedMatrix};
