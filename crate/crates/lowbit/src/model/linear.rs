//! Quantized linear layers and activation-quantizer nodes for the autodiff
//! graph.
//!
//! The fused linear node of a fully quantized layer computes its matrix
//! product over integer levels in 64-bit accumulators and applies the scales
//! once per output element — the same arithmetic, in the same order, as the
//! bit-packed inference kernels. Weight and embedding row scales round
//! through 32-bit floats at every point of use because the packed deployment
//! format stores them as 32-bit floats; training therefore optimizes exactly
//! the network that deployment runs, and an export round trip is a no-op.

use super::{ForwardCtx, Mode};
use crate::graph::{matmul_tensors, transpose_tensor, Graph, Var};
use crate::kernels::reference_gemm_levels;
use crate::params::{Bound, ParamId, ParamSet};
use crate::quant::{
    act_alpha_init, baseline_act_grad_input, baseline_act_quantize, baseline_weight_backward,
    byte_quantize_weights, elastic_binarize, elastic_byte, elastic_grad_alpha, elastic_grad_input,
    elastic_ternarize, maxent_binarize, maxent_ternarize, maxent_weight_backward, sign_binarize,
    threshold_ternarize, ActRange, QuantKind, QuantizedTensor, EPSILON,
};
use crate::tensor::Tensor;
use rand::Rng;
use std::cell::Cell;

/// Rounds a scale to 32-bit float precision, the precision the packed
/// deployment format stores row scales in. Idempotent, so exporting and
/// reloading a model changes nothing.
pub(crate) fn deploy_scale(alpha: f64) -> f64 {
    alpha as f32 as f64
}

/// Input-activation quantizer attached to a linear layer or attention site.
#[derive(Clone, Debug)]
pub enum ActQuant {
    /// Full-precision input (32-bit activations).
    Identity,
    /// Learnable per-tensor scale, straight-through gradients.
    Elastic {
        alpha: ParamId,
        bits: u8,
        range: ActRange,
        /// Set once the scale has been calibrated from real activations.
        initialized: Cell<bool>,
    },
    /// Stats-based per-batch scale, nothing learned (ablation baseline).
    Baseline { bits: u8 },
}

impl ActQuant {
    /// Builds the quantizer for one site. `name` is the dotted site name;
    /// elastic sites register a scale parameter `{name}.a`.
    pub(crate) fn for_config(
        params: &mut ParamSet,
        name: &str,
        bits_act: u8,
        elastic: bool,
        range: ActRange,
    ) -> ActQuant {
        if bits_act == 32 {
            ActQuant::Identity
        } else if elastic {
            let alpha = params.add_clamped(format!("{name}.a"), Tensor::scalar(1.0), EPSILON);
            ActQuant::Elastic {
                alpha,
                bits: bits_act,
                range,
                initialized: Cell::new(false),
            }
        } else {
            ActQuant::Baseline { bits: bits_act }
        }
    }

    /// The learnable-scale parameter, when this site has one.
    pub fn alpha_param(&self) -> Option<ParamId> {
        match self {
            ActQuant::Elastic { alpha, .. } => Some(*alpha),
            _ => None,
        }
    }
}

/// A linear layer whose real-valued master weights are freshly quantized on
/// every forward pass; the bias (when present) stays full precision.
#[derive(Clone, Debug)]
pub struct QuantLinear {
    pub name: String,
    /// Master weight matrix, `[out_dim, in_dim]`.
    pub weight: ParamId,
    /// Full-precision bias, `[out_dim]`; `None` for the tied output head.
    pub bias: Option<ParamId>,
    /// Weight bits: 1, 2, 8, or 32.
    pub bits_weight: u8,
    /// Max-entropy weight quantizers when true, threshold/sign baselines
    /// when false.
    pub maxent: bool,
    /// Quantizer applied to this layer's input.
    pub act: ActQuant,
}

impl QuantLinear {
    /// Registers `{name}.w` and `{name}.b` with uniform Xavier init.
    pub(crate) fn new(
        params: &mut ParamSet,
        rng: &mut impl Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bits_weight: u8,
        maxent: bool,
        act: ActQuant,
    ) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let weight = params.add(format!("{name}.w"), Tensor::new(&[out_dim, in_dim], data));
        let bias = params.add(format!("{name}.b"), Tensor::zeros(&[out_dim]));
        QuantLinear {
            name: name.to_string(),
            weight,
            bias: Some(bias),
            bits_weight,
            maxent,
            act,
        }
    }
}

/// Quantizes a weight matrix at the given bit width and family.
pub(crate) fn quantize_weight_matrix(w: &Tensor, bits: u8, maxent: bool) -> QuantizedTensor {
    match (bits, maxent) {
        (2, true) => maxent_ternarize(w),
        (2, false) => threshold_ternarize(w),
        (1, true) => maxent_binarize(w),
        (1, false) => sign_binarize(w),
        (8, _) => byte_quantize_weights(w),
        (bits, _) => panic!("no weight quantizer for {bits} bits"),
    }
}

/// Straight-through weight gradient matching the quantizer that produced `q`.
pub(crate) fn weight_backward(upstream: &Tensor, w: &Tensor, q: &QuantizedTensor) -> Tensor {
    match q.scheme.kind {
        QuantKind::BaselineTernary | QuantKind::BaselineBinary => {
            baseline_weight_backward(upstream, w)
        }
        _ => maxent_weight_backward(upstream, w, q),
    }
}

/// Quantizes an activation tensor per the site's family and bit width.
pub(crate) fn quantize_act_tensor(
    x: &Tensor,
    bits: u8,
    elastic: bool,
    alpha: f64,
    range: ActRange,
) -> QuantizedTensor {
    if elastic {
        match bits {
            2 => elastic_ternarize(x, alpha, range),
            1 => elastic_binarize(x, alpha, range),
            8 => elastic_byte(x, alpha, range),
            bits => panic!("no elastic activation quantizer for {bits} bits"),
        }
    } else {
        baseline_act_quantize(x, bits)
    }
}

/// Dequantizes a weight matrix with deployment-precision row scales.
pub(crate) fn deployed_dequant(q: &QuantizedTensor) -> Tensor {
    let cols = q.cols();
    let data = q
        .levels
        .iter()
        .enumerate()
        .map(|(i, &l)| deploy_scale(q.row_alpha(i / cols)) * l as f64)
        .collect();
    Tensor::new(&q.shape, data)
}

/// Scales an integer accumulator grid into the output tensor.
///
/// `raw` is `[out_dim, positions]` row-major (the layout the packed GEMM
/// produces); the result is `[positions, out_dim]`. One multiply chain per
/// element, `(w_alpha · x_alpha) · raw`, shared verbatim by the training
/// forward and the packed inference path so the two stay bit-identical.
pub(crate) fn scale_level_grid(
    raw: &[i64],
    out_dim: usize,
    positions: usize,
    w_alpha: &[f64],
    x_alpha: f64,
) -> Tensor {
    assert_eq!(raw.len(), out_dim * positions, "accumulator grid size mismatch");
    assert_eq!(w_alpha.len(), out_dim, "one weight scale per output row required");
    let mut data = vec![0.0; positions * out_dim];
    for m in 0..out_dim {
        let s = w_alpha[m] * x_alpha;
        for n in 0..positions {
            data[n * out_dim + m] = s * raw[m * positions + n] as f64;
        }
    }
    Tensor::new(&[positions, out_dim], data)
}

/// Gathers rows of a quantized table, dequantizing with deployment-precision
/// row scales; shared by the embedding node and packed inference.
pub(crate) fn gather_quantized_rows(q: &QuantizedTensor, ids: &[usize]) -> Tensor {
    let cols = q.cols();
    let mut data = Vec::with_capacity(ids.len() * cols);
    for &id in ids {
        assert!(id < q.rows(), "row {id} out of range for {} rows", q.rows());
        let a = deploy_scale(q.row_alpha(id));
        for c in 0..cols {
            data.push(a * q.levels[id * cols + c] as f64);
        }
    }
    Tensor::new(&[ids.len(), cols], data)
}

enum WeightSide {
    Full,
    Quant { qw: QuantizedTensor, deq: Tensor },
}

enum ActSide {
    Full,
    Quant {
        qx: QuantizedTensor,
        elastic: bool,
        with_alpha: bool,
    },
}

/// Resolves the scale an elastic site uses this pass: the stored parameter,
/// or (during calibration of an uninitialized site) a fresh statistics-based
/// suggestion that is also recorded into the context for later committing.
fn resolve_elastic_alpha(
    g: &Graph,
    ctx: &ForwardCtx,
    x_val: &Tensor,
    alpha: ParamId,
    bits: u8,
    range: ActRange,
    initialized: &Cell<bool>,
    bound: &Bound,
) -> (f64, Var) {
    let a_var = bound.var(alpha);
    let stored = g.value(a_var).item();
    let used = if ctx.mode == Mode::Calibrate && !initialized.get() {
        let suggested = act_alpha_init(x_val, bits, range);
        ctx.record_calibration(alpha.0, suggested);
        suggested
    } else {
        stored
    };
    (used, a_var)
}

/// Forward of a [`QuantLinear`] as one fused custom node (plus a bias-add).
///
/// Fully quantized configurations take the integer path: level matmul in i64,
/// then [`scale_level_grid`] with deployment-precision weight scales. Partly
/// quantized configurations fall back to float matmuls over dequantized
/// operands. Backward applies the straight-through rules of each side.
pub fn quant_linear_node(
    g: &mut Graph,
    ctx: &ForwardCtx,
    layer: &QuantLinear,
    bound: &Bound,
    x: Var,
) -> Var {
    let w_var = bound.var(layer.weight);
    let x_val = g.value(x).clone();
    let w_val = g.value(w_var).clone();
    assert_eq!(x_val.shape().len(), 2, "linear input must be rank 2");
    assert_eq!(
        x_val.cols(),
        w_val.cols(),
        "input width {} does not match layer {} input dim {}",
        x_val.cols(),
        layer.name,
        w_val.cols()
    );
    let (positions, out_dim) = (x_val.rows(), w_val.rows());

    let mut parents = vec![x, w_var];
    let aside = match &layer.act {
        ActQuant::Identity => ActSide::Full,
        ActQuant::Elastic {
            alpha,
            bits,
            range,
            initialized,
        } => {
            let (used, a_var) =
                resolve_elastic_alpha(g, ctx, &x_val, *alpha, *bits, *range, initialized, bound);
            parents.push(a_var);
            ActSide::Quant {
                qx: quantize_act_tensor(&x_val, *bits, true, used, *range),
                elastic: true,
                with_alpha: true,
            }
        }
        ActQuant::Baseline { bits } => ActSide::Quant {
            qx: quantize_act_tensor(&x_val, *bits, false, 0.0, ActRange::Signed),
            elastic: false,
            with_alpha: false,
        },
    };
    let wside = if layer.bits_weight == 32 {
        WeightSide::Full
    } else {
        let qw = quantize_weight_matrix(&w_val, layer.bits_weight, layer.maxent);
        let deq = deployed_dequant(&qw);
        WeightSide::Quant { qw, deq }
    };

    let value = match (&wside, &aside) {
        (WeightSide::Full, ActSide::Full) => {
            matmul_tensors(&x_val, &transpose_tensor(&w_val))
        }
        (WeightSide::Full, ActSide::Quant { qx, .. }) => {
            matmul_tensors(&qx.dequant(), &transpose_tensor(&w_val))
        }
        (WeightSide::Quant { deq, .. }, ActSide::Full) => {
            matmul_tensors(&x_val, &transpose_tensor(deq))
        }
        (WeightSide::Quant { qw, .. }, ActSide::Quant { qx, .. }) => {
            let raw = reference_gemm_levels(qw, qx).expect("shapes validated above");
            let deployed: Vec<f64> = qw.alpha.iter().map(|&a| deploy_scale(a)).collect();
            scale_level_grid(&raw, out_dim, positions, &deployed, qx.alpha[0])
        }
    };

    let y = g.custom(&parents, value, move |up, saved| {
        let (x_saved, w_saved) = (&saved[0], &saved[1]);
        let x_deq_holder;
        let x_deq: &Tensor = match &aside {
            ActSide::Full => x_saved,
            ActSide::Quant { qx, .. } => {
                x_deq_holder = qx.dequant();
                &x_deq_holder
            }
        };
        let w_deq: &Tensor = match &wside {
            WeightSide::Full => w_saved,
            WeightSide::Quant { deq, .. } => deq,
        };
        let d_xhat = matmul_tensors(up, w_deq);
        let d_wplain = matmul_tensors(&transpose_tensor(up), x_deq);
        let d_w = match &wside {
            WeightSide::Full => d_wplain,
            WeightSide::Quant { qw, .. } => weight_backward(&d_wplain, w_saved, qw),
        };
        match &aside {
            ActSide::Full => vec![d_xhat, d_w],
            ActSide::Quant {
                qx,
                elastic,
                with_alpha,
            } => {
                let d_x = if *elastic {
                    elastic_grad_input(&d_xhat, x_saved, qx)
                } else {
                    baseline_act_grad_input(&d_xhat, x_saved, qx.alpha[0])
                };
                let mut grads = vec![d_x, d_w];
                if *with_alpha {
                    grads.push(Tensor::scalar(elastic_grad_alpha(&d_xhat, x_saved, qx)));
                }
                grads
            }
        }
    });

    match layer.bias {
        Some(b) => g.add_row(y, bound.var(b)),
        None => y,
    }
}

/// A quantized activation in the graph: the dequantized value plus the scale
/// needed to recover its integer levels downstream.
pub(crate) struct QuantizedAct {
    pub var: Var,
    /// `None` when the site is full precision (no level grid exists).
    pub alpha: Option<f64>,
}

/// Standalone activation fake-quant node (attention Q/K/V and probability
/// sites). Value = dequantized levels; backward applies the site's
/// straight-through rules.
pub(crate) fn act_quant_node(
    g: &mut Graph,
    ctx: &ForwardCtx,
    act: &ActQuant,
    bound: &Bound,
    x: Var,
) -> QuantizedAct {
    match act {
        ActQuant::Identity => QuantizedAct { var: x, alpha: None },
        ActQuant::Elastic {
            alpha,
            bits,
            range,
            initialized,
        } => {
            let x_val = g.value(x).clone();
            let (used, a_var) =
                resolve_elastic_alpha(g, ctx, &x_val, *alpha, *bits, *range, initialized, bound);
            let qx = quantize_act_tensor(&x_val, *bits, true, used, *range);
            let value = qx.dequant();
            let var = g.custom(&[x, a_var], value, move |up, saved| {
                vec![
                    elastic_grad_input(up, &saved[0], &qx),
                    Tensor::scalar(elastic_grad_alpha(up, &saved[0], &qx)),
                ]
            });
            QuantizedAct {
                var,
                alpha: Some(used),
            }
        }
        ActQuant::Baseline { bits } => {
            let x_val = g.value(x).clone();
            let qx = quantize_act_tensor(&x_val, *bits, false, 0.0, ActRange::Signed);
            let alpha = qx.alpha[0];
            let value = qx.dequant();
            let var = g.custom(&[x], value, move |up, saved| {
                vec![baseline_act_grad_input(up, &saved[0], qx.alpha[0])]
            });
            QuantizedAct {
                var,
                alpha: Some(alpha),
            }
        }
    }
}

/// Recovers integer levels from a dequantized per-tensor quantized value.
/// Exact for the small level sets in use; asserts the value sits on the grid.
pub(crate) fn recover_levels(t: &Tensor, alpha: f64) -> Vec<i32> {
    t.data()
        .iter()
        .map(|&v| {
            let z = v / alpha;
            let l = z.round();
            assert!(
                (z - l).abs() < 1e-6,
                "value {v} is not on the level grid of scale {alpha}"
            );
            l as i32
        })
        .collect()
}

/// Matrix product of two per-tensor quantized value tensors, computed over
/// recovered integer levels: `a [n,k] · b [m,k]ᵀ → [n,m]`.
///
/// The scales multiply once per output element in packed-kernel order (`b`'s
/// scale first), keeping attention arithmetic bit-identical to deployment.
/// Backward treats the operands as plain matrices — the quantizer gradients
/// live on the upstream act-quant nodes.
pub(crate) fn quantized_rowdot_node(
    g: &mut Graph,
    a: Var,
    b: Var,
    alpha_a: f64,
    alpha_b: f64,
) -> Var {
    let (a_val, b_val) = (g.value(a), g.value(b));
    let (n, k) = (a_val.rows(), a_val.cols());
    let (m, kb) = (b_val.rows(), b_val.cols());
    assert_eq!(k, kb, "inner dimensions differ: {k} vs {kb}");
    let la = recover_levels(a_val, alpha_a);
    let lb = recover_levels(b_val, alpha_b);
    let mut raw = vec![0i64; m * n];
    for mm in 0..m {
        for nn in 0..n {
            let mut acc = 0i64;
            for i in 0..k {
                acc += lb[mm * k + i] as i64 * la[nn * k + i] as i64;
            }
            raw[mm * n + nn] = acc;
        }
    }
    let value = scale_level_grid(&raw, m, n, &vec![alpha_b; m], alpha_a);
    g.custom(&[a, b], value, |up, saved| {
        vec![
            matmul_tensors(up, &saved[1]),
            matmul_tensors(&transpose_tensor(up), &saved[0]),
        ]
    })
}

/// Inverted dropout on a tensor; identity outside training mode or when the
/// rate is zero.
pub(crate) fn dropout_node(g: &mut Graph, ctx: &ForwardCtx, x: Var, p: f64) -> Var {
    if p == 0.0 || ctx.mode != Mode::Train {
        return x;
    }
    let Some(rng) = &ctx.dropout_rng else {
        return x;
    };
    let keep = 1.0 - p;
    let x_val = g.value(x);
    let mask = Tensor::new(
        x_val.shape(),
        x_val
            .data()
            .iter()
            .map(|_| {
                if rng.borrow_mut().gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect(),
    );
    let value = Tensor::new(
        x_val.shape(),
        x_val
            .data()
            .iter()
            .zip(mask.data())
            .map(|(&v, &m)| v * m)
            .collect(),
    );
    g.custom(&[x], value, move |up, _| {
        vec![Tensor::new(
            up.shape(),
            up.data()
                .iter()
                .zip(mask.data())
                .map(|(&u, &m)| u * m)
                .collect(),
        )]
    })
}
