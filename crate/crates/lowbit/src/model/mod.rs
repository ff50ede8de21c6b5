//! A small transformer encoder–decoder with quantized linear layers,
//! embeddings, and attention activations, trained with straight-through
//! gradients and distilled from a full-precision teacher.
//!
//! Bit widths are written as an E-W-A triple (embedding, weight, activation
//! bits): 1 = binary, 2 = ternary, 8 = uniform bytes, 32 = full precision.
//! Fully quantized configurations compute every matrix product over integer
//! levels and apply scales once per output element, so the training-time
//! forward pass is bit-identical to packed multiplication-free inference.

mod attention;
mod distill;
mod linear;
mod packed;
mod transformer;

pub use attention::{FeedForward, MultiHeadAttention};
pub use distill::{distill_loss, KdConfig, TeacherOutputs};
pub use linear::{ActQuant, QuantLinear};
pub use packed::PackedModel;
pub use transformer::{ForwardOutput, Model, NamedMatrix};

use anyhow::{ensure, Result};
use std::cell::RefCell;
use std::collections::BTreeMap;

/// Token id that starts every decoder input.
pub const BOS: usize = 0;
/// Token id that terminates every target sequence.
pub const EOS: usize = 1;

/// Architecture and bit-width settings for one model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ffn: usize,
    pub max_seq_len: usize,
    /// Embedding-table bits (the E of E-W-A).
    pub bits_embed: u8,
    /// Linear-weight bits (the W of E-W-A).
    pub bits_weight: u8,
    /// Activation bits (the A of E-W-A).
    pub bits_act: u8,
    pub dropout: f64,
}

impl ModelConfig {
    /// The desk-scale default: a full-precision model small enough to train
    /// on one CPU core in minutes.
    pub fn desk_default() -> Self {
        ModelConfig {
            vocab_size: 64,
            d_model: 64,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_ffn: 128,
            max_seq_len: 33,
            bits_embed: 32,
            bits_weight: 32,
            bits_act: 32,
            dropout: 0.0,
        }
    }

    /// Same architecture with a different E-W-A triple.
    pub fn with_bits(mut self, embed: u8, weight: u8, act: u8) -> Self {
        self.bits_embed = embed;
        self.bits_weight = weight;
        self.bits_act = act;
        self
    }

    /// True when every component is full precision.
    pub fn is_full_precision(&self) -> bool {
        self.bits_embed == 32 && self.bits_weight == 32 && self.bits_act == 32
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.vocab_size > 2, "vocab_size must exceed the 2 reserved tokens");
        ensure!(self.d_model > 0 && self.d_ffn > 0, "model dimensions must be positive");
        ensure!(self.n_heads > 0, "n_heads must be positive");
        ensure!(
            self.d_model % self.n_heads == 0,
            "d_model {} not divisible by n_heads {}",
            self.d_model,
            self.n_heads
        );
        ensure!(
            self.n_enc_layers > 0 && self.n_dec_layers > 0,
            "layer counts must be positive"
        );
        ensure!(self.max_seq_len > 2, "max_seq_len too small for BOS/EOS framing");
        for (name, bits) in [
            ("embedding", self.bits_embed),
            ("weight", self.bits_weight),
            ("activation", self.bits_act),
        ] {
            ensure!(
                matches!(bits, 1 | 2 | 8 | 32),
                "{name} bits must be one of 1, 2, 8, 32 (got {bits})"
            );
        }
        ensure!(
            (0.0..1.0).contains(&self.dropout),
            "dropout must lie in [0, 1)"
        );
        Ok(())
    }
}

/// Which quantizer family each side of the model uses; the rows of the
/// ablation comparison.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Ablation {
    /// Max-entropy weights and elastic activations (the full method).
    Both,
    /// Max-entropy weights, stats-based baseline activations.
    WeightOnly,
    /// Baseline threshold/sign weights, elastic activations.
    ActOnly,
    /// Baseline quantizers on both sides.
    Baseline,
}

impl Ablation {
    /// True when weight matrices use the max-entropy quantizers.
    pub fn maxent_weights(self) -> bool {
        matches!(self, Ablation::Both | Ablation::WeightOnly)
    }

    /// True when activations use the elastic learnable-scale quantizers.
    pub fn elastic_acts(self) -> bool {
        matches!(self, Ablation::Both | Ablation::ActOnly)
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Both => "both",
            Ablation::WeightOnly => "weight-only",
            Ablation::ActOnly => "act-only",
            Ablation::Baseline => "baseline",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "both" => Ablation::Both,
            "weight-only" => Ablation::WeightOnly,
            "act-only" => Ablation::ActOnly,
            "baseline" => Ablation::Baseline,
            other => anyhow::bail!(
                "unknown ablation {other:?} (expected both, weight-only, act-only, baseline)"
            ),
        })
    }
}

/// What a forward pass is for; controls calibration and dropout.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    /// Gather activation statistics to initialize the learnable scales; no
    /// gradients are taken.
    Calibrate,
    /// Normal training forward (dropout active when configured).
    Train,
    /// Deterministic inference forward.
    Eval,
}

/// Per-pass state threaded through the forward functions: the mode plus the
/// calibration accumulator (scale-parameter id → running mean of suggested
/// initial scales).
pub struct ForwardCtx {
    pub mode: Mode,
    pub(crate) calib: RefCell<BTreeMap<usize, (f64, usize)>>,
    pub(crate) dropout_rng: Option<RefCell<rand_chacha::ChaCha8Rng>>,
}

impl ForwardCtx {
    pub fn new(mode: Mode) -> Self {
        ForwardCtx {
            mode,
            calib: RefCell::new(BTreeMap::new()),
            dropout_rng: None,
        }
    }

    /// Training context with an explicit dropout stream (only used when the
    /// model's dropout rate is nonzero).
    pub fn train_with_dropout(seed: u64) -> Self {
        use rand::SeedableRng;
        ForwardCtx {
            mode: Mode::Train,
            calib: RefCell::new(BTreeMap::new()),
            dropout_rng: Some(RefCell::new(rand_chacha::ChaCha8Rng::seed_from_u64(seed))),
        }
    }

    pub(crate) fn record_calibration(&self, alpha_param: usize, suggested: f64) {
        let mut map = self.calib.borrow_mut();
        let entry = map.entry(alpha_param).or_insert((0.0, 0));
        entry.0 += suggested;
        entry.1 += 1;
    }
}
