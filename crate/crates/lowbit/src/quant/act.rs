//! Elastic activation quantizers with a learnable per-tensor scale, plus the
//! stats-based baseline activation quantizer used in ablations.
//!
//! Activations come in two categories, quantized differently:
//! - *Nonnegative* tensors (post-ReLU, post-softmax) keep all their levels on
//!   the nonnegative side: {0, 1, 2} ternary, {0, 1} binary.
//! - *Signed* tensors are centered by their (detached) mean and use symmetric
//!   levels: {-1, 0, 1} ternary, sign binary.
//!
//! The scale `alpha` is a trained parameter; its gradient flows through the
//! straight-through rules implemented here.

use super::{round_half_away, QuantKind, QuantScheme, QuantizedTensor, EPSILON};
use crate::tensor::Tensor;

/// The two activation categories.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ActRange {
    /// Real-valued activations, centered before quantization.
    Signed,
    /// Nonnegative activations (post-ReLU / post-softmax), never centered.
    NonNeg,
}

fn check_nonneg(x: &Tensor) {
    for &v in x.data() {
        assert!(
            v >= 0.0,
            "nonnegative activation quantizer received {v}; only post-ReLU/post-softmax tensors may use this branch"
        );
    }
}

fn tensor_mean(x: &Tensor) -> f64 {
    x.data().iter().sum::<f64>() / x.len() as f64
}

fn make_act(x: &Tensor, kind: QuantKind, alpha: f64, mu: f64, levels: Vec<i32>) -> QuantizedTensor {
    QuantizedTensor {
        shape: x.shape().to_vec(),
        levels,
        alpha: vec![alpha],
        mu: vec![mu],
        scheme: QuantScheme::act(kind),
    }
}

/// Elastic ternarization. Nonnegative branch: `round(clip(x/alpha, 0, 2))`;
/// signed branch: center by the tensor mean, then
/// `round(clip(x'/alpha, -1, 1))`.
pub fn elastic_ternarize(x: &Tensor, alpha: f64, range: ActRange) -> QuantizedTensor {
    assert!(alpha >= EPSILON, "alpha {alpha} below epsilon");
    assert!(!x.is_empty(), "empty activation tensor");
    match range {
        ActRange::NonNeg => {
            check_nonneg(x);
            let levels = x
                .data()
                .iter()
                .map(|&v| round_half_away((v / alpha).clamp(0.0, 2.0)) as i32)
                .collect();
            make_act(x, QuantKind::TernaryActNonNeg, alpha, 0.0, levels)
        }
        ActRange::Signed => {
            let mu = tensor_mean(x);
            let levels = x
                .data()
                .iter()
                .map(|&v| round_half_away(((v - mu) / alpha).clamp(-1.0, 1.0)) as i32)
                .collect();
            make_act(x, QuantKind::TernaryActSigned, alpha, mu, levels)
        }
    }
}

/// Elastic binarization. Nonnegative branch: `round(clip(x/alpha, 0, 1))`;
/// signed branch: sign of the centered value, with sign(0) = +1.
pub fn elastic_binarize(x: &Tensor, alpha: f64, range: ActRange) -> QuantizedTensor {
    assert!(alpha >= EPSILON, "alpha {alpha} below epsilon");
    assert!(!x.is_empty(), "empty activation tensor");
    match range {
        ActRange::NonNeg => {
            check_nonneg(x);
            let levels = x
                .data()
                .iter()
                .map(|&v| round_half_away((v / alpha).clamp(0.0, 1.0)) as i32)
                .collect();
            make_act(x, QuantKind::BinaryActNonNeg, alpha, 0.0, levels)
        }
        ActRange::Signed => {
            let mu = tensor_mean(x);
            let levels = x
                .data()
                .iter()
                .map(|&v| if v - mu >= 0.0 { 1 } else { -1 })
                .collect();
            make_act(x, QuantKind::BinaryActSigned, alpha, mu, levels)
        }
    }
}

/// Uniform 8-bit fake-quant helper with the same elastic-gradient treatment,
/// used by the 8-bit activation configurations. Nonnegative branch clips to
/// levels [0, 255]; signed branch centers and clips to [-127, 127].
pub fn elastic_byte(x: &Tensor, alpha: f64, range: ActRange) -> QuantizedTensor {
    assert!(alpha >= EPSILON, "alpha {alpha} below epsilon");
    assert!(!x.is_empty(), "empty activation tensor");
    match range {
        ActRange::NonNeg => {
            check_nonneg(x);
            let levels = x
                .data()
                .iter()
                .map(|&v| round_half_away((v / alpha).clamp(0.0, 255.0)) as i32)
                .collect();
            make_act(x, QuantKind::ByteActNonNeg, alpha, 0.0, levels)
        }
        ActRange::Signed => {
            let mu = tensor_mean(x);
            let levels = x
                .data()
                .iter()
                .map(|&v| round_half_away(((v - mu) / alpha).clamp(-127.0, 127.0)) as i32)
                .collect();
            make_act(x, QuantKind::ByteActSigned, alpha, mu, levels)
        }
    }
}

/// Per-element clip window of the straight-through rules, as `(value, lo,
/// hi)` where `value` is the branch's pre-division input (raw or centered).
fn clip_window(x: f64, q: &QuantizedTensor) -> (f64, f64, f64) {
    let alpha = q.alpha[0];
    match q.scheme.kind {
        QuantKind::TernaryActNonNeg => (x, 0.0, 2.0 * alpha),
        QuantKind::BinaryActNonNeg => (x, 0.0, alpha),
        QuantKind::ByteActNonNeg => (x, 0.0, 255.0 * alpha),
        QuantKind::TernaryActSigned | QuantKind::BinaryActSigned => (x - q.mu[0], -alpha, alpha),
        QuantKind::ByteActSigned => (x - q.mu[0], -127.0 * alpha, 127.0 * alpha),
        other => panic!("not an elastic activation tensor: {other:?}"),
    }
}

/// Gradient of the loss with respect to the learnable scale.
///
/// Per element the straight-through partial is
/// `level - (value/alpha)·1[value in clip window]` (for sign binarization the
/// partial is just the level, i.e. the sign); the result is the
/// upstream-weighted sum of partials.
pub fn elastic_grad_alpha(upstream: &Tensor, x: &Tensor, q: &QuantizedTensor) -> f64 {
    assert_eq!(upstream.shape(), x.shape(), "upstream/input shape mismatch");
    assert_eq!(x.shape(), q.shape.as_slice(), "input/quantized shape mismatch");
    let alpha = q.alpha[0];
    let mut sum = 0.0;
    for (i, (&u, &xv)) in upstream.data().iter().zip(x.data()).enumerate() {
        let level = q.levels[i] as f64;
        let partial = if q.scheme.kind == QuantKind::BinaryActSigned {
            level
        } else {
            let (value, lo, hi) = clip_window(xv, q);
            let in_range = value >= lo && value <= hi;
            level - if in_range { value / alpha } else { 0.0 }
        };
        sum += u * partial;
    }
    sum
}

/// Straight-through gradient for the activation input path: pass the
/// upstream gradient where the (centered) value lies inside the clip window.
pub fn elastic_grad_input(upstream: &Tensor, x: &Tensor, q: &QuantizedTensor) -> Tensor {
    assert_eq!(upstream.shape(), x.shape(), "upstream/input shape mismatch");
    assert_eq!(x.shape(), q.shape.as_slice(), "input/quantized shape mismatch");
    let data = upstream
        .data()
        .iter()
        .zip(x.data())
        .map(|(&u, &xv)| {
            let (value, lo, hi) = clip_window(xv, q);
            if value >= lo && value <= hi {
                u
            } else {
                0.0
            }
        })
        .collect();
    Tensor::new(x.shape(), data)
}

/// Calibration value for a fresh activation scale, mirroring the weight
/// statistics: 4/3 of the mean absolute (centered) value for ternary, the
/// mean absolute value for binary, and a full-range fit for 8-bit.
pub fn act_alpha_init(x: &Tensor, bits: u8, range: ActRange) -> f64 {
    assert!(!x.is_empty(), "empty activation tensor");
    let mu = match range {
        ActRange::Signed => tensor_mean(x),
        ActRange::NonNeg => 0.0,
    };
    let alpha = match bits {
        2 => 4.0 / 3.0 * x.data().iter().map(|&v| (v - mu).abs()).sum::<f64>() / x.len() as f64,
        1 => x.data().iter().map(|&v| (v - mu).abs()).sum::<f64>() / x.len() as f64,
        8 => {
            let max_dev = x.data().iter().map(|&v| (v - mu).abs()).fold(0.0, f64::max);
            match range {
                ActRange::Signed => max_dev / 127.0,
                ActRange::NonNeg => max_dev / 255.0,
            }
        }
        other => panic!("no activation quantizer for {other} bits"),
    };
    alpha.max(EPSILON)
}

/// Stats-based baseline activation quantizer (per tensor, nothing learned):
/// the magnitude-threshold ternary rule or the sign binary rule applied to
/// the raw values, ignoring the signed/nonnegative distinction.
pub fn baseline_act_quantize(x: &Tensor, bits: u8) -> QuantizedTensor {
    assert!(!x.is_empty(), "empty activation tensor");
    let n = x.len() as f64;
    match bits {
        2 => {
            let delta = 0.7 * x.data().iter().map(|v| v.abs()).sum::<f64>() / n;
            let mut above_sum = 0.0;
            let mut above_count = 0usize;
            let mut levels = Vec::with_capacity(x.len());
            for &v in x.data() {
                levels.push(if v > delta {
                    1
                } else if v < -delta {
                    -1
                } else {
                    0
                });
                if v.abs() > delta {
                    above_sum += v.abs();
                    above_count += 1;
                }
            }
            let alpha = if above_count == 0 {
                EPSILON
            } else {
                (above_sum / above_count as f64).max(EPSILON)
            };
            make_act(x, QuantKind::BaselineTernary, alpha, 0.0, levels)
        }
        1 => {
            let alpha = (x.data().iter().map(|v| v.abs()).sum::<f64>() / n).max(EPSILON);
            let levels = x.data().iter().map(|&v| if v >= 0.0 { 1 } else { -1 }).collect();
            make_act(x, QuantKind::BaselineBinary, alpha, 0.0, levels)
        }
        8 => {
            let max_abs = x.data().iter().map(|v| v.abs()).fold(0.0, f64::max);
            let alpha = (max_abs / 127.0).max(EPSILON);
            let levels = x
                .data()
                .iter()
                .map(|&v| round_half_away((v / alpha).clamp(-127.0, 127.0)) as i32)
                .collect();
            make_act(x, QuantKind::ByteActSigned, alpha, 0.0, levels)
        }
        other => panic!("no baseline activation quantizer for {other} bits"),
    }
}

/// Input-path straight-through rule for the baseline activation quantizer:
/// pass-through inside `|x| ≤ alpha` (the scale-wide symmetric window),
/// keeping baseline training bounded without the elastic machinery.
pub fn baseline_act_grad_input(upstream: &Tensor, x: &Tensor, alpha: f64) -> Tensor {
    assert_eq!(upstream.shape(), x.shape(), "upstream/input shape mismatch");
    let data = upstream
        .data()
        .iter()
        .zip(x.data())
        .map(|(&u, &xv)| if xv.abs() <= alpha { u } else { 0.0 })
        .collect();
    Tensor::new(x.shape(), data)
}
