//! Weight quantizers, all per output-channel row of a rank-2 matrix.
//!
//! Two families:
//! - *Baselines*: magnitude-threshold ternarization and sign binarization,
//!   whose scales minimize reconstruction error but concentrate levels.
//! - *Max-entropy isometric*: mean-centered, scaled so that (for typical
//!   weight distributions) the level histogram approaches uniform, which is
//!   the entropy-maximizing assignment.

use super::{round_half_away, QuantKind, QuantScheme, QuantizedTensor, EPSILON};
use crate::tensor::Tensor;

fn quantize_rows(
    w: &Tensor,
    kind: QuantKind,
    row_rule: impl Fn(&[f64], &mut Vec<i32>) -> (f64, f64),
) -> QuantizedTensor {
    assert_eq!(w.shape().len(), 2, "weight quantizers need rank 2, got {:?}", w.shape());
    let (rows, cols) = (w.rows(), w.cols());
    assert!(cols > 0, "weight quantizers need nonempty rows");
    let mut levels = Vec::with_capacity(rows * cols);
    let mut alpha = Vec::with_capacity(rows);
    let mut mu = Vec::with_capacity(rows);
    for r in 0..rows {
        let (a, m) = row_rule(&w.data()[r * cols..(r + 1) * cols], &mut levels);
        alpha.push(a);
        mu.push(m);
    }
    QuantizedTensor {
        shape: w.shape().to_vec(),
        levels,
        alpha,
        mu,
        scheme: QuantScheme::weight(kind),
    }
}

/// Magnitude-threshold ternarization (baseline).
///
/// Per row: threshold `Δ = 0.7·‖w‖₁/n`; levels −1/0/+1 by comparison with
/// ±Δ; scale = mean |w_i| over the above-threshold elements. Degenerate rows
/// (nothing above threshold) get scale [`EPSILON`] and all-zero levels.
pub fn threshold_ternarize(w: &Tensor) -> QuantizedTensor {
    quantize_rows(w, QuantKind::BaselineTernary, |row, levels| {
        let n = row.len() as f64;
        let delta = 0.7 * row.iter().map(|x| x.abs()).sum::<f64>() / n;
        let mut above_sum = 0.0;
        let mut above_count = 0usize;
        for &x in row {
            let level = if x > delta {
                1
            } else if x < -delta {
                -1
            } else {
                0
            };
            levels.push(level);
            if x.abs() > delta {
                above_sum += x.abs();
                above_count += 1;
            }
        }
        let alpha = if above_count == 0 {
            EPSILON
        } else {
            (above_sum / above_count as f64).max(EPSILON)
        };
        (alpha, 0.0)
    })
}

/// Sign binarization (baseline): level = sign(w) with sign(0) = +1, scale =
/// mean |w|. All-zero rows get scale [`EPSILON`].
pub fn sign_binarize(w: &Tensor) -> QuantizedTensor {
    quantize_rows(w, QuantKind::BaselineBinary, |row, levels| {
        let n = row.len() as f64;
        let mut abs_sum = 0.0;
        for &x in row {
            levels.push(if x >= 0.0 { 1 } else { -1 });
            abs_sum += x.abs();
        }
        ((abs_sum / n).max(EPSILON), 0.0)
    })
}

/// Max-entropy isometric ternarization.
///
/// Per row: center at the mean, scale by 4/3 of the mean absolute deviation
/// (so a uniform weight distribution splits evenly across the three levels),
/// then round the clipped normalized values.
pub fn maxent_ternarize(w: &Tensor) -> QuantizedTensor {
    quantize_rows(w, QuantKind::TernaryWeight, |row, levels| {
        let (mu, mad) = mean_and_mad(row);
        let alpha = (4.0 / 3.0 * mad).max(EPSILON);
        for &x in row {
            let z = ((x - mu) / alpha).clamp(-1.0, 1.0);
            levels.push(round_half_away(z) as i32);
        }
        (alpha, mu)
    })
}

/// Max-entropy isometric binarization: center at the mean, scale by the mean
/// absolute deviation, level = sign of the deviation with sign(0) = +1.
pub fn maxent_binarize(w: &Tensor) -> QuantizedTensor {
    quantize_rows(w, QuantKind::BinaryWeight, |row, levels| {
        let (mu, mad) = mean_and_mad(row);
        let alpha = mad.max(EPSILON);
        for &x in row {
            levels.push(if x - mu >= 0.0 { 1 } else { -1 });
        }
        (alpha, mu)
    })
}

/// Uniform symmetric 8-bit weight quantizer (used by 8-bit weight configs):
/// center at the mean, scale so the largest deviation maps to level ±127.
pub fn byte_quantize_weights(w: &Tensor) -> QuantizedTensor {
    quantize_rows(w, QuantKind::ByteWeight, |row, levels| {
        let mu = row.iter().sum::<f64>() / row.len() as f64;
        let max_dev = row.iter().map(|&x| (x - mu).abs()).fold(0.0, f64::max);
        let alpha = (max_dev / 127.0).max(EPSILON);
        for &x in row {
            let z = ((x - mu) / alpha).clamp(-127.0, 127.0);
            levels.push(round_half_away(z) as i32);
        }
        (alpha, mu)
    })
}

fn mean_and_mad(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mu = row.iter().sum::<f64>() / n;
    let mad = row.iter().map(|&x| (x - mu).abs()).sum::<f64>() / n;
    (mu, mad)
}

/// Straight-through gradient for the max-entropy weight quantizers (and the
/// uniform byte quantizer): pass the upstream gradient where the normalized
/// deviation sits inside the clip range, zero elsewhere. The scale and
/// center are treated as constants.
///
/// Binary uses the strict interior `|z| < 1`; ternary and byte pass through
/// the closed clip range.
pub fn maxent_weight_backward(upstream: &Tensor, w: &Tensor, q: &QuantizedTensor) -> Tensor {
    assert_eq!(upstream.shape(), w.shape(), "gradient/weight shape mismatch");
    assert_eq!(w.shape(), q.shape.as_slice(), "weight/quantized shape mismatch");
    let cols = q.cols();
    let data = upstream
        .data()
        .iter()
        .zip(w.data())
        .enumerate()
        .map(|(i, (&u, &x))| {
            let r = i / cols;
            let z = (x - q.mu[r]) / q.alpha[r];
            let pass = match q.scheme.kind {
                QuantKind::BinaryWeight => z.abs() < 1.0,
                QuantKind::TernaryWeight => z.abs() <= 1.0,
                QuantKind::ByteWeight => z.abs() <= 127.0,
                other => panic!("not a max-entropy weight quantized tensor: {other:?}"),
            };
            if pass {
                u
            } else {
                0.0
            }
        })
        .collect();
    Tensor::new(w.shape(), data)
}

/// Straight-through gradient used when training with the baseline weight
/// quantizers: pass-through inside the fixed clip range `|w| ≤ 1`,
/// independent of the learned scale (the baselines adapt no clip range,
/// which is precisely their gradient-mismatch deficiency).
pub fn baseline_weight_backward(upstream: &Tensor, w: &Tensor) -> Tensor {
    assert_eq!(upstream.shape(), w.shape(), "gradient/weight shape mismatch");
    let data = upstream
        .data()
        .iter()
        .zip(w.data())
        .map(|(&u, &x)| if x.abs() <= 1.0 { u } else { 0.0 })
        .collect();
    Tensor::new(w.shape(), data)
}
