//! Quantizer mathematics: weight quantizers (statistics-based ternary and
//! binary, both the magnitude-threshold baselines and the max-entropy
//! isometric forms), elastic activation quantizers with a learnable scale,
//! straight-through gradient rules, and entropy diagnostics.
//!
//! Every function here is pure; training state (master weights, learnable
//! scales) lives elsewhere and is only read.

mod act;
mod entropy;
mod weight;

pub use act::{
    act_alpha_init, baseline_act_grad_input, baseline_act_quantize, elastic_binarize,
    elastic_byte, elastic_grad_alpha, elastic_grad_input, elastic_ternarize, ActRange,
};
pub use entropy::{level_counts, quant_entropy};
pub use weight::{
    baseline_weight_backward, byte_quantize_weights, maxent_binarize, maxent_ternarize,
    maxent_weight_backward, sign_binarize, threshold_ternarize,
};

use crate::tensor::Tensor;

/// Floor applied to every scale so dequantization never divides by zero and
/// degenerate (constant) inputs stay well-defined.
pub const EPSILON: f64 = 1e-8;

/// Round-half-away-from-zero, the single rounding rule used by every
/// quantizer (0.5 → 1, −0.5 → −1). `f64::round` implements exactly this.
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

/// Which quantizer family produced a [`QuantizedTensor`], fixing its level
/// set.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum QuantKind {
    /// Max-entropy ternary weights, levels {-1, 0, 1}.
    TernaryWeight,
    /// Max-entropy binary weights, levels {-1, 1}.
    BinaryWeight,
    /// Uniform 8-bit weights, levels {-127..=127}.
    ByteWeight,
    /// Elastic ternary on nonnegative activations, levels {0, 1, 2}.
    TernaryActNonNeg,
    /// Elastic ternary on signed activations, levels {-1, 0, 1}.
    TernaryActSigned,
    /// Elastic binary on nonnegative activations, levels {0, 1}.
    BinaryActNonNeg,
    /// Elastic binary on signed activations, levels {-1, 1}.
    BinaryActSigned,
    /// Uniform 8-bit on nonnegative activations, levels {0..=255}.
    ByteActNonNeg,
    /// Uniform 8-bit on signed activations, levels {-127..=127}.
    ByteActSigned,
    /// Magnitude-threshold ternary baseline, levels {-1, 0, 1}.
    BaselineTernary,
    /// Sign binary baseline, levels {-1, 1}.
    BaselineBinary,
}

impl QuantKind {
    /// Inclusive level bounds for this kind.
    pub fn level_bounds(self) -> (i32, i32) {
        match self {
            QuantKind::TernaryWeight | QuantKind::TernaryActSigned | QuantKind::BaselineTernary => (-1, 1),
            QuantKind::BinaryWeight | QuantKind::BinaryActSigned | QuantKind::BaselineBinary => (-1, 1),
            QuantKind::TernaryActNonNeg => (0, 2),
            QuantKind::BinaryActNonNeg => (0, 1),
            QuantKind::ByteWeight | QuantKind::ByteActSigned => (-127, 127),
            QuantKind::ByteActNonNeg => (0, 255),
        }
    }

    /// True for the binary kinds whose level set excludes zero.
    pub fn is_two_level(self) -> bool {
        matches!(
            self,
            QuantKind::BinaryWeight
                | QuantKind::BinaryActSigned
                | QuantKind::BinaryActNonNeg
                | QuantKind::BaselineBinary
        )
    }
}

/// Scale/offset granularity of a quantized tensor.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Granularity {
    /// One scale per output row (weight matrices).
    PerRow,
    /// One scale for the whole tensor (activations).
    PerTensor,
}

/// A quantizer family paired with its granularity.
///
/// Weight kinds always quantize per row; activation kinds always per tensor.
/// The constructors enforce that pairing.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct QuantScheme {
    pub kind: QuantKind,
    pub granularity: Granularity,
}

impl QuantScheme {
    /// Per-row weight scheme. Panics when `kind` is an activation kind.
    pub fn weight(kind: QuantKind) -> Self {
        assert!(
            matches!(
                kind,
                QuantKind::TernaryWeight
                    | QuantKind::BinaryWeight
                    | QuantKind::ByteWeight
                    | QuantKind::BaselineTernary
                    | QuantKind::BaselineBinary
            ),
            "{kind:?} is not a weight kind"
        );
        QuantScheme {
            kind,
            granularity: Granularity::PerRow,
        }
    }

    /// Per-tensor activation scheme. Panics when `kind` is a weight-only
    /// kind.
    pub fn act(kind: QuantKind) -> Self {
        assert!(
            !matches!(
                kind,
                QuantKind::TernaryWeight | QuantKind::BinaryWeight | QuantKind::ByteWeight
            ),
            "{kind:?} is not an activation kind"
        );
        QuantScheme {
            kind,
            granularity: Granularity::PerTensor,
        }
    }
}

/// Integer levels plus the statistics needed to dequantize them.
///
/// The dequantized value of element `i` is exactly `alpha · level[i]`; `mu`
/// is the centering statistic used during quantization and is never added
/// back.
#[derive(Clone, Debug)]
pub struct QuantizedTensor {
    pub shape: Vec<usize>,
    /// Row-major integer levels.
    pub levels: Vec<i32>,
    /// One scale per row (PerRow) or a single scale (PerTensor). Always
    /// ≥ [`EPSILON`].
    pub alpha: Vec<f64>,
    /// Centering statistic, aligned with `alpha`.
    pub mu: Vec<f64>,
    pub scheme: QuantScheme,
}

impl QuantizedTensor {
    /// Number of elements.
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Rows of a rank-2 tensor (or 1 for rank-1).
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Columns of a rank-2 tensor (or the length for rank-1).
    pub fn cols(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[1]
        } else {
            self.levels.len()
        }
    }

    /// Scale for a given row, respecting granularity.
    pub fn row_alpha(&self, row: usize) -> f64 {
        match self.scheme.granularity {
            Granularity::PerRow => self.alpha[row],
            Granularity::PerTensor => self.alpha[0],
        }
    }

    /// Reconstructs `alpha · level` as a dense tensor.
    pub fn dequant(&self) -> Tensor {
        let cols = self.cols();
        let data = self
            .levels
            .iter()
            .enumerate()
            .map(|(i, &l)| self.row_alpha(i / cols) * l as f64)
            .collect();
        Tensor::new(&self.shape, data)
    }

    /// Asserts every level lies in the scheme's level set.
    pub fn check_levels(&self) {
        let (lo, hi) = self.scheme.kind.level_bounds();
        let two_level = self.scheme.kind.is_two_level();
        for &l in &self.levels {
            assert!(
                l >= lo && l <= hi && !(two_level && lo < 0 && l == 0),
                "level {l} outside {:?} range [{lo}, {hi}]",
                self.scheme.kind
            );
        }
    }
}
