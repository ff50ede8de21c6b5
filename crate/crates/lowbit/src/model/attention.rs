//! Multi-head attention and the feed-forward block.
//!
//! Quantized configurations fake-quantize the projected Q/K/V tensors (signed
//! category) and the post-softmax probability matrix (nonnegative category),
//! and compute both attention matrix products over recovered integer levels,
//! exactly as the packed inference path does. The Q/K/V tensors are quantized
//! whole — their per-tensor centering statistic must see the full tensor —
//! and sliced into heads afterwards, which is level-preserving.

use super::linear::{
    act_quant_node, dropout_node, quant_linear_node, quantized_rowdot_node, ActQuant, QuantLinear,
};
use super::ForwardCtx;
use crate::graph::{Graph, Var};
use crate::params::{Bound, ParamSet};
use crate::quant::ActRange;
use crate::tensor::Tensor;
use rand::Rng;

/// Score scaling factor `1/√d_head`, shared by training and packed inference.
pub(crate) fn attn_scale(d_head: usize) -> f64 {
    1.0 / (d_head as f64).sqrt()
}

/// Multi-head attention with quantized projections and quantized attention
/// matrix products.
pub struct MultiHeadAttention {
    pub q: QuantLinear,
    pub k: QuantLinear,
    pub v: QuantLinear,
    pub o: QuantLinear,
    /// Signed sites for the projected Q/K/V tensors feeding the two
    /// attention matrix products.
    pub qt: ActQuant,
    pub kt: ActQuant,
    pub vt: ActQuant,
    /// Nonnegative site for the post-softmax probability matrix, one scale
    /// shared across heads.
    pub probs: ActQuant,
    pub n_heads: usize,
    pub d_head: usize,
}

impl MultiHeadAttention {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        params: &mut ParamSet,
        rng: &mut impl Rng,
        name: &str,
        d_model: usize,
        n_heads: usize,
        bits_weight: u8,
        maxent: bool,
        bits_act: u8,
        elastic: bool,
    ) -> Self {
        fn proj(
            params: &mut ParamSet,
            rng: &mut impl Rng,
            site: String,
            d_model: usize,
            bits_weight: u8,
            maxent: bool,
            bits_act: u8,
            elastic: bool,
        ) -> QuantLinear {
            let act = ActQuant::for_config(params, &site, bits_act, elastic, ActRange::Signed);
            QuantLinear::new(params, rng, &site, d_model, d_model, bits_weight, maxent, act)
        }
        let q = proj(params, rng, format!("{name}.q"), d_model, bits_weight, maxent, bits_act, elastic);
        let k = proj(params, rng, format!("{name}.k"), d_model, bits_weight, maxent, bits_act, elastic);
        let v = proj(params, rng, format!("{name}.v"), d_model, bits_weight, maxent, bits_act, elastic);
        let o = proj(params, rng, format!("{name}.o"), d_model, bits_weight, maxent, bits_act, elastic);
        let site = |part: &str| format!("{name}.{part}");
        MultiHeadAttention {
            q,
            k,
            v,
            o,
            qt: ActQuant::for_config(params, &site("qt"), bits_act, elastic, ActRange::Signed),
            kt: ActQuant::for_config(params, &site("kt"), bits_act, elastic, ActRange::Signed),
            vt: ActQuant::for_config(params, &site("vt"), bits_act, elastic, ActRange::Signed),
            probs: ActQuant::for_config(params, &site("p"), bits_act, elastic, ActRange::NonNeg),
            n_heads,
            d_head: d_model / n_heads,
        }
    }

    /// Attention over `x_q` (queries) and `x_kv` (keys/values), with an
    /// optional additive score mask (0 for visible, −∞ for blocked).
    pub fn forward(
        &self,
        g: &mut Graph,
        ctx: &ForwardCtx,
        bound: &Bound,
        x_q: Var,
        x_kv: Var,
        mask: Option<&Tensor>,
        dropout: f64,
    ) -> Var {
        let q = quant_linear_node(g, ctx, &self.q, bound, x_q);
        let k = quant_linear_node(g, ctx, &self.k, bound, x_kv);
        let v = quant_linear_node(g, ctx, &self.v, bound, x_kv);
        let qq = act_quant_node(g, ctx, &self.qt, bound, q);
        let kq = act_quant_node(g, ctx, &self.kt, bound, k);
        let vq = act_quant_node(g, ctx, &self.vt, bound, v);
        let scale = attn_scale(self.d_head);
        let mask_var = mask.map(|m| g.leaf(m.clone()));

        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let (c0, c1) = (h * self.d_head, (h + 1) * self.d_head);
            let qh = g.slice_cols(qq.var, c0, c1);
            let kh = g.slice_cols(kq.var, c0, c1);
            let vh = g.slice_cols(vq.var, c0, c1);
            let scores = match (qq.alpha, kq.alpha) {
                (Some(aq), Some(ak)) => quantized_rowdot_node(g, qh, kh, aq, ak),
                _ => {
                    let kt = g.transpose(kh);
                    g.matmul(qh, kt)
                }
            };
            let scores = g.scale(scores, scale);
            let scores = match mask_var {
                Some(m) => g.add(scores, m),
                None => scores,
            };
            let p = g.softmax_rows(scores);
            let pq = act_quant_node(g, ctx, &self.probs, bound, p);
            let context = match (pq.alpha, vq.alpha) {
                (Some(ap), Some(av)) => {
                    let vt = g.transpose(vh);
                    quantized_rowdot_node(g, pq.var, vt, ap, av)
                }
                _ => g.matmul(pq.var, vh),
            };
            heads.push(context);
        }
        let concat = g.concat_cols(&heads);
        let out = quant_linear_node(g, ctx, &self.o, bound, concat);
        dropout_node(g, ctx, out, dropout)
    }
}

/// Two-layer feed-forward block: linear → ReLU → (nonnegative quant inside
/// the second layer) → linear.
pub struct FeedForward {
    pub fc1: QuantLinear,
    pub fc2: QuantLinear,
}

impl FeedForward {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        params: &mut ParamSet,
        rng: &mut impl Rng,
        name: &str,
        d_model: usize,
        d_ffn: usize,
        bits_weight: u8,
        maxent: bool,
        bits_act: u8,
        elastic: bool,
    ) -> Self {
        let fc1_site = format!("{name}.fc1");
        let fc1_act = ActQuant::for_config(params, &fc1_site, bits_act, elastic, ActRange::Signed);
        let fc1 = QuantLinear::new(
            params, rng, &fc1_site, d_model, d_ffn, bits_weight, maxent, fc1_act,
        );
        let fc2_site = format!("{name}.fc2");
        // The fc2 input is the ReLU output: nonnegative category.
        let fc2_act = ActQuant::for_config(params, &fc2_site, bits_act, elastic, ActRange::NonNeg);
        let fc2 = QuantLinear::new(
            params, rng, &fc2_site, d_ffn, d_model, bits_weight, maxent, fc2_act,
        );
        FeedForward { fc1, fc2 }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        ctx: &ForwardCtx,
        bound: &Bound,
        x: Var,
        dropout: f64,
    ) -> Var {
        let h = quant_linear_node(g, ctx, &self.fc1, bound, x);
        let h = g.relu(h);
        let out = quant_linear_node(g, ctx, &self.fc2, bound, h);
        dropout_node(g, ctx, out, dropout)
    }
}
