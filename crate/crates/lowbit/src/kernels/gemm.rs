//! Multiplication-free GEMM over packed bit planes.
//!
//! Both operands pack their K dimension along rows: weights are [M, K], the
//! activation matrix is [N, K], and the product is the [M, N] matrix of row
//! dot products. Signed×signed binary uses the XOR form `K − 2·popcount`;
//! everything else uses AND-mask popcount algebra over the pos/neg/two
//! planes. Accumulation is exact in 64-bit integers; each output element is
//! converted to a real and scaled once.

use super::pack::{PackScheme, PackedMatrix};
use crate::quant::QuantizedTensor;
use crate::tensor::Tensor;
use anyhow::{ensure, Result};

/// Integer dot products of every (w row, x row) pair, computed entirely
/// with bitwise ops and popcounts. Output is row-major [w.rows, x.rows].
pub fn gemm_raw(w: &PackedMatrix, x: &PackedMatrix) -> Vec<i64> {
    assert_eq!(
        w.cols, x.cols,
        "inner dimensions differ: {} vs {}",
        w.cols, x.cols
    );
    let wpr = w.words_per_row();
    let mut out = vec![0i64; w.rows * x.rows];
    let xnor_path = w.scheme == PackScheme::Binary && x.scheme == PackScheme::Binary;
    for m in 0..w.rows {
        let wp = &w.plane_pos[m * wpr..(m + 1) * wpr];
        let wn = &w.plane_neg[m * wpr..(m + 1) * wpr];
        let w2 = if w.plane_two.is_empty() {
            None
        } else {
            Some(&w.plane_two[m * wpr..(m + 1) * wpr])
        };
        for n in 0..x.rows {
            let xp = &x.plane_pos[n * wpr..(n + 1) * wpr];
            let raw = if xnor_path {
                let disagreements: i64 = wp
                    .iter()
                    .zip(xp)
                    .map(|(&a, &b)| (a ^ b).count_ones() as i64)
                    .sum();
                w.cols as i64 - 2 * disagreements
            } else {
                let xn = &x.plane_neg[n * wpr..(n + 1) * wpr];
                let x2 = if x.plane_two.is_empty() {
                    None
                } else {
                    Some(&x.plane_two[n * wpr..(n + 1) * wpr])
                };
                let mut acc = 0i64;
                for i in 0..wpr {
                    let pc = |v: u64| v.count_ones() as i64;
                    acc += pc(wp[i] & xp[i]) + pc(wn[i] & xn[i])
                        - pc(wp[i] & xn[i])
                        - pc(wn[i] & xp[i]);
                    if let Some(x2) = x2 {
                        acc += 2 * (pc(wp[i] & x2[i]) - pc(wn[i] & x2[i]));
                    }
                    if let Some(w2) = w2 {
                        acc += 2 * (pc(w2[i] & xp[i]) - pc(w2[i] & xn[i]));
                        if let Some(x2) = x2 {
                            acc += 4 * pc(w2[i] & x2[i]);
                        }
                    }
                }
                acc
            };
            out[m * x.rows + n] = raw;
        }
    }
    out
}

fn scaled_output(w: &PackedMatrix, x: &PackedMatrix, raw: Vec<i64>) -> Tensor {
    let data = raw
        .iter()
        .enumerate()
        .map(|(i, &r)| w.row_scales[i / x.rows] * x.row_scales[i % x.rows] * r as f64)
        .collect();
    Tensor::new(&[w.rows, x.rows], data)
}

/// Binary weights times binary or {0,1} activations: XNOR/AND popcount dot
/// products scaled by the two row scales.
pub fn binary_gemm(w: &PackedMatrix, x: &PackedMatrix) -> Tensor {
    assert_eq!(w.scheme, PackScheme::Binary, "weights must be binary");
    assert!(
        matches!(x.scheme, PackScheme::Binary | PackScheme::BinaryNonNeg),
        "binary_gemm activations must be binary, got {:?}",
        x.scheme
    );
    let raw = gemm_raw(w, x);
    scaled_output(w, x, raw)
}

/// Ternary weights times ternary or {0,1,2} activations: masked popcount
/// dot products scaled by the two row scales.
pub fn ternary_gemm(w: &PackedMatrix, x: &PackedMatrix) -> Tensor {
    assert_eq!(w.scheme, PackScheme::Ternary, "weights must be ternary");
    assert!(
        matches!(x.scheme, PackScheme::Ternary | PackScheme::TernaryNonNeg),
        "ternary_gemm activations must be ternary, got {:?}",
        x.scheme
    );
    let raw = gemm_raw(w, x);
    scaled_output(w, x, raw)
}

/// Dense row-dot-row float GEMM: `out[m][n] = Σ_k a[m,k]·b[n,k]`, no
/// shortcuts — the timing and correctness baseline.
pub(crate) fn dense_gemm(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols(), b.cols(), "inner dimensions differ");
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += ad[i * k + p] * bd[j * k + p];
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::new(&[m, n], out)
}

/// Ground-truth oracle: naive float GEMM over the dequantized values.
pub fn reference_gemm(qw: &QuantizedTensor, qx: &QuantizedTensor) -> Tensor {
    dense_gemm(&qw.dequant(), &qx.dequant())
}

/// Ground-truth integer oracle: plain dot products of the level matrices,
/// bypassing the packed representation entirely.
pub fn reference_gemm_levels(qw: &QuantizedTensor, qx: &QuantizedTensor) -> Result<Vec<i64>> {
    ensure!(
        qw.cols() == qx.cols(),
        "inner dimensions differ: {} vs {}",
        qw.cols(),
        qx.cols()
    );
    let (m, k, n) = (qw.rows(), qw.cols(), qx.rows());
    let mut out = vec![0i64; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0i64;
            for p in 0..k {
                acc += qw.levels[i * k + p] as i64 * qx.levels[j * k + p] as i64;
            }
            out[i * n + j] = acc;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::pack::pack;
    use crate::quant::{Granularity, QuantKind, QuantScheme};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quant(levels: Vec<i32>, rows: usize, cols: usize, kind: QuantKind, alpha: f64) -> QuantizedTensor {
        let scheme = match kind {
            QuantKind::TernaryWeight | QuantKind::BinaryWeight => QuantScheme::weight(kind),
            k => QuantScheme::act(k),
        };
        let scales = match scheme.granularity {
            Granularity::PerRow => vec![alpha; rows],
            Granularity::PerTensor => vec![alpha],
        };
        QuantizedTensor {
            shape: vec![rows, cols],
            levels,
            alpha: scales.clone(),
            mu: vec![0.0; scales.len()],
            scheme,
        }
    }

    fn random_levels(rng: &mut ChaCha8Rng, n: usize, choices: &[i32]) -> Vec<i32> {
        (0..n).map(|_| choices[rng.gen_range(0..choices.len())]).collect()
    }

    #[test]
    fn binary_worked_examples() {
        let w = pack(&quant(vec![1, -1, 1], 1, 3, QuantKind::BinaryWeight, 1.0)).unwrap();
        let x = pack(&quant(vec![1, 1, -1], 1, 3, QuantKind::BinaryActSigned, 1.0)).unwrap();
        assert_eq!(gemm_raw(&w, &x), vec![-1], "3 - 2·2 disagreements");
        assert_eq!(binary_gemm(&w, &x).data(), &[-1.0]);

        let x01 = pack(&quant(vec![1, 0, 1], 1, 3, QuantKind::BinaryActNonNeg, 1.0)).unwrap();
        assert_eq!(gemm_raw(&w, &x01), vec![2], "pos hits 2, neg hits 0");
    }

    #[test]
    fn zero_nonneg_activations_give_zero_output() {
        let w = pack(&quant(vec![1, -1, 1, -1], 2, 2, QuantKind::BinaryWeight, 2.0)).unwrap();
        let x = pack(&quant(vec![0, 0, 0, 0, 0, 0], 3, 2, QuantKind::BinaryActNonNeg, 1.5)).unwrap();
        assert_eq!(binary_gemm(&w, &x).data(), &[0.0; 6]);
    }

    #[test]
    fn ternary_worked_examples() {
        let w = pack(&quant(vec![1, 0, -1], 1, 3, QuantKind::TernaryWeight, 1.0)).unwrap();
        let x = pack(&quant(vec![1, 1, 1], 1, 3, QuantKind::TernaryActSigned, 1.0)).unwrap();
        assert_eq!(gemm_raw(&w, &x), vec![0]);

        let zeros = pack(&quant(vec![0, 0, 0], 1, 3, QuantKind::TernaryActSigned, 1.0)).unwrap();
        assert_eq!(ternary_gemm(&w, &zeros).data(), &[0.0]);
    }

    #[test]
    fn nonneg_ternary_second_plane_counts_double() {
        let w = pack(&quant(vec![1, -1, 1], 1, 3, QuantKind::TernaryWeight, 1.0)).unwrap();
        let x = pack(&quant(vec![2, 2, 1], 1, 3, QuantKind::TernaryActNonNeg, 1.0)).unwrap();
        // 1·2 + (-1)·2 + 1·1 = 1.
        assert_eq!(gemm_raw(&w, &x), vec![1]);
    }

    #[test]
    fn scaled_output_matches_float_reference_with_dyadic_scales() {
        // Power-of-two scales make every float product exact, so the packed
        // result and the float reference agree to the last bit and divide
        // back to the integer accumulators exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (m, k, n) = (16, 32, 8);
        let qw = quant(
            random_levels(&mut rng, m * k, &[-1, 0, 1]),
            m,
            k,
            QuantKind::TernaryWeight,
            0.5,
        );
        let qx = quant(
            random_levels(&mut rng, n * k, &[-1, 0, 1]),
            n,
            k,
            QuantKind::TernaryActSigned,
            0.25,
        );
        let packed = ternary_gemm(&pack(&qw).unwrap(), &pack(&qx).unwrap());
        let reference = reference_gemm(&qw, &qx);
        assert_eq!(packed.data(), reference.data());
        let raw = gemm_raw(&pack(&qw).unwrap(), &pack(&qx).unwrap());
        for (i, &r) in raw.iter().enumerate() {
            assert_eq!(reference.data()[i] / (0.5 * 0.25), r as f64);
        }
    }

    #[test]
    fn integer_equivalence_across_schemes_and_ragged_shapes() {
        // The exactness property: packed popcount accumulators equal plain
        // integer dot products for every scheme pairing, on shapes that
        // straddle word boundaries.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let pairings: [(QuantKind, QuantKind, &[i32], &[i32]); 4] = [
            (QuantKind::BinaryWeight, QuantKind::BinaryActSigned, &[-1, 1], &[-1, 1]),
            (QuantKind::BinaryWeight, QuantKind::BinaryActNonNeg, &[-1, 1], &[0, 1]),
            (QuantKind::TernaryWeight, QuantKind::TernaryActSigned, &[-1, 0, 1], &[-1, 0, 1]),
            (QuantKind::TernaryWeight, QuantKind::TernaryActNonNeg, &[-1, 0, 1], &[0, 1, 2]),
        ];
        for trial in 0..200 {
            let (wk, xk, wc, xc) = pairings[trial % 4];
            let k = match trial % 5 {
                0 => 1,
                1 => rng.gen_range(2..64),
                2 => 64,
                3 => rng.gen_range(65..129),
                _ => rng.gen_range(129..258),
            };
            let m = rng.gen_range(1..7);
            let n = rng.gen_range(1..7);
            let qw = quant(random_levels(&mut rng, m * k, wc), m, k, wk, 1.0);
            let qx = quant(random_levels(&mut rng, n * k, xc), n, k, xk, 1.0);
            let raw = gemm_raw(&pack(&qw).unwrap(), &pack(&qx).unwrap());
            let oracle = reference_gemm_levels(&qw, &qx).unwrap();
            assert_eq!(raw, oracle, "trial {trial}: {wk:?}×{xk:?} k={k}");
        }
    }

    #[test]
    fn scale_linearity_per_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let qw = quant(
            random_levels(&mut rng, 3 * 70, &[-1, 1]),
            3,
            70,
            QuantKind::BinaryWeight,
            1.5,
        );
        let qx = quant(
            random_levels(&mut rng, 4 * 70, &[-1, 1]),
            4,
            70,
            QuantKind::BinaryActSigned,
            0.75,
        );
        let (w, x) = (pack(&qw).unwrap(), pack(&qx).unwrap());
        let base = binary_gemm(&w, &x);
        let mut w_scaled = w.clone();
        w_scaled.row_scales[1] *= 4.0; // power of two: float-exact
        let scaled = binary_gemm(&w_scaled, &x);
        for n in 0..4 {
            assert_eq!(scaled.get2(0, n), base.get2(0, n), "other rows untouched");
            assert_eq!(scaled.get2(1, n), 4.0 * base.get2(1, n));
        }
    }

    #[test]
    fn identity_weight_block_returns_scaled_activations() {
        // Ternary identity: row i selects activation element i.
        let k = 5;
        let mut levels = vec![0; k * k];
        for i in 0..k {
            levels[i * k + i] = 1;
        }
        let qw = quant(levels, k, k, QuantKind::TernaryWeight, 1.0);
        let qx = quant(vec![1, -1, 0, 1, -1], 1, k, QuantKind::TernaryActSigned, 2.0);
        let out = reference_gemm(&qw, &qx);
        assert_eq!(out.shape(), &[k, 1]);
        let expect = [2.0, -2.0, 0.0, 2.0, -2.0];
        for i in 0..k {
            assert_eq!(out.get2(i, 0), expect[i]);
        }
        let packed = ternary_gemm(&pack(&qw).unwrap(), &pack(&qx).unwrap());
        assert_eq!(packed.data(), out.data());
    }
}
