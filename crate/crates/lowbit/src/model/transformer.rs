//! The encoder–decoder model: construction, forward passes, activation-scale
//! calibration, greedy decoding, and teacher→student initialization.
//!
//! Pre-norm residual blocks with a final layernorm on each stack. The token
//! embedding is quantized like a weight matrix and tied to the output head;
//! positional embeddings, layernorm parameters, and biases stay full
//! precision.

use super::attention::{FeedForward, MultiHeadAttention};
use super::distill::TeacherOutputs;
use super::linear::{
    gather_quantized_rows, quant_linear_node, quantize_weight_matrix, weight_backward, ActQuant,
    QuantLinear,
};
use super::{Ablation, ForwardCtx, Mode, ModelConfig, BOS, EOS};
use crate::graph::{Graph, Var};
use crate::params::{Bound, ParamId, ParamSet};
use crate::quant::{quant_entropy, ActRange, QuantizedTensor, EPSILON};
use crate::tensor::Tensor;
use anyhow::{ensure, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Layernorm epsilon, shared by training and packed inference.
pub(crate) const LN_EPS: f64 = 1e-5;

pub(crate) struct EncoderLayer {
    pub(crate) ln1: (ParamId, ParamId),
    pub(crate) attn: MultiHeadAttention,
    pub(crate) ln2: (ParamId, ParamId),
    pub(crate) ffn: FeedForward,
}

pub(crate) struct DecoderLayer {
    pub(crate) ln1: (ParamId, ParamId),
    pub(crate) self_attn: MultiHeadAttention,
    pub(crate) ln2: (ParamId, ParamId),
    pub(crate) cross_attn: MultiHeadAttention,
    pub(crate) ln3: (ParamId, ParamId),
    pub(crate) ffn: FeedForward,
}

/// Graph handles produced by one teacher-forced forward pass.
pub struct ForwardOutput {
    /// `[tgt_len, vocab]` output logits.
    pub logits: Var,
    /// Final encoder hidden states (post final layernorm).
    pub enc_hidden: Var,
    /// Final decoder hidden states (post final layernorm, pre head).
    pub dec_hidden: Var,
}

/// One quantizable weight matrix with its fresh quantization.
pub struct NamedMatrix {
    pub name: String,
    pub master: Tensor,
    pub quant: QuantizedTensor,
}

/// A transformer encoder–decoder whose linear layers, embedding table, and
/// attention activations are quantized per the E-W-A configuration.
pub struct Model {
    pub config: ModelConfig,
    pub ablation: Ablation,
    pub params: ParamSet,
    pub(crate) embed_table: ParamId,
    pub(crate) embed_pos: ParamId,
    pub(crate) enc: Vec<EncoderLayer>,
    pub(crate) dec: Vec<DecoderLayer>,
    pub(crate) enc_ln: (ParamId, ParamId),
    pub(crate) dec_ln: (ParamId, ParamId),
    /// Tied output head: weight is the embedding table, no bias.
    pub(crate) head: QuantLinear,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .field("ablation", &self.ablation)
            .field("n_params", &self.params.len())
            .finish_non_exhaustive()
    }
}

fn layernorm_params(params: &mut ParamSet, name: &str, dim: usize) -> (ParamId, ParamId) {
    let g = params.add(format!("{name}.g"), Tensor::full(&[dim], 1.0));
    let b = params.add(format!("{name}.b"), Tensor::zeros(&[dim]));
    (g, b)
}

impl Model {
    /// Builds a freshly initialized model. Parameter registration order (and
    /// therefore naming) is deterministic given the config and seed.
    pub fn new(config: ModelConfig, ablation: Ablation, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let maxent = ablation.maxent_weights();
        let elastic = ablation.elastic_acts();
        let (bw, ba) = (config.bits_weight, config.bits_act);

        let table_data = (0..config.vocab_size * d)
            .map(|_| rng.gen_range(-0.1..0.1))
            .collect();
        let embed_table = params.add(
            "embed.table",
            Tensor::new(&[config.vocab_size, d], table_data),
        );
        let pos_data = (0..config.max_seq_len * d)
            .map(|_| rng.gen_range(-0.1..0.1))
            .collect();
        let embed_pos = params.add("embed.pos", Tensor::new(&[config.max_seq_len, d], pos_data));

        let mut enc = Vec::with_capacity(config.n_enc_layers);
        for i in 0..config.n_enc_layers {
            let p = format!("enc{i}");
            enc.push(EncoderLayer {
                ln1: layernorm_params(&mut params, &format!("{p}.ln1"), d),
                attn: MultiHeadAttention::new(
                    &mut params,
                    &mut rng,
                    &format!("{p}.attn"),
                    d,
                    config.n_heads,
                    bw,
                    maxent,
                    ba,
                    elastic,
                ),
                ln2: layernorm_params(&mut params, &format!("{p}.ln2"), d),
                ffn: FeedForward::new(
                    &mut params,
                    &mut rng,
                    &format!("{p}.ffn"),
                    d,
                    config.d_ffn,
                    bw,
                    maxent,
                    ba,
                    elastic,
                ),
            });
        }
        let mut dec = Vec::with_capacity(config.n_dec_layers);
        for i in 0..config.n_dec_layers {
            let p = format!("dec{i}");
            dec.push(DecoderLayer {
                ln1: layernorm_params(&mut params, &format!("{p}.ln1"), d),
                self_attn: MultiHeadAttention::new(
                    &mut params,
                    &mut rng,
                    &format!("{p}.self"),
                    d,
                    config.n_heads,
                    bw,
                    maxent,
                    ba,
                    elastic,
                ),
                ln2: layernorm_params(&mut params, &format!("{p}.ln2"), d),
                cross_attn: MultiHeadAttention::new(
                    &mut params,
                    &mut rng,
                    &format!("{p}.cross"),
                    d,
                    config.n_heads,
                    bw,
                    maxent,
                    ba,
                    elastic,
                ),
                ln3: layernorm_params(&mut params, &format!("{p}.ln3"), d),
                ffn: FeedForward::new(
                    &mut params,
                    &mut rng,
                    &format!("{p}.ffn"),
                    d,
                    config.d_ffn,
                    bw,
                    maxent,
                    ba,
                    elastic,
                ),
            });
        }
        let enc_ln = layernorm_params(&mut params, "enc.ln", d);
        let dec_ln = layernorm_params(&mut params, "dec.ln", d);
        let head_act = ActQuant::for_config(&mut params, "head", ba, elastic, ActRange::Signed);
        let head = QuantLinear {
            name: "head".into(),
            weight: embed_table,
            bias: None,
            bits_weight: config.bits_embed,
            maxent,
            act: head_act,
        };
        Ok(Model {
            config,
            ablation,
            params,
            embed_table,
            embed_pos,
            enc,
            dec,
            enc_ln,
            dec_ln,
            head,
        })
    }

    fn ln(&self, g: &mut Graph, bound: &Bound, ids: (ParamId, ParamId), x: Var) -> Var {
        g.layernorm(x, bound.var(ids.0), bound.var(ids.1), LN_EPS)
    }

    /// Embedding lookup with the table fake-quantized at `bits_embed`;
    /// straight-through gradients scatter back into the master table.
    fn embed_node(&self, g: &mut Graph, bound: &Bound, ids: &[usize]) -> Var {
        let table_var = bound.var(self.embed_table);
        if self.config.bits_embed == 32 {
            return g.embedding(ids, table_var);
        }
        let q = quantize_weight_matrix(
            g.value(table_var),
            self.config.bits_embed,
            self.ablation.maxent_weights(),
        );
        let value = gather_quantized_rows(&q, ids);
        let ids = ids.to_vec();
        let cols = self.config.d_model;
        g.custom(&[table_var], value, move |up, saved| {
            let table = &saved[0];
            let mut acc = vec![0.0; table.len()];
            for (r, &id) in ids.iter().enumerate() {
                for c in 0..cols {
                    acc[id * cols + c] += up.data()[r * cols + c];
                }
            }
            vec![weight_backward(&Tensor::new(table.shape(), acc), table, &q)]
        })
    }

    fn embed_with_pos(&self, g: &mut Graph, bound: &Bound, ids: &[usize]) -> Var {
        assert!(!ids.is_empty(), "empty token sequence");
        assert!(
            ids.len() <= self.config.max_seq_len,
            "sequence length {} exceeds max_seq_len {}",
            ids.len(),
            self.config.max_seq_len
        );
        let e = self.embed_node(g, bound, ids);
        let pos = g.slice_rows(bound.var(self.embed_pos), 0, ids.len());
        g.add(e, pos)
    }

    /// Encoder stack over a source sequence; returns `[src_len, d_model]`
    /// memory (post final layernorm).
    pub fn encode(&self, g: &mut Graph, ctx: &ForwardCtx, bound: &Bound, src: &[usize]) -> Var {
        let mut x = self.embed_with_pos(g, bound, src);
        for layer in &self.enc {
            let h = self.ln(g, bound, layer.ln1, x);
            let a = layer
                .attn
                .forward(g, ctx, bound, h, h, None, self.config.dropout);
            x = g.add(x, a);
            let h = self.ln(g, bound, layer.ln2, x);
            let f = layer.ffn.forward(g, ctx, bound, h, self.config.dropout);
            x = g.add(x, f);
        }
        self.ln(g, bound, self.enc_ln, x)
    }

    /// Decoder stack over a teacher-forced target prefix; returns (logits,
    /// final hidden states).
    pub fn decode(
        &self,
        g: &mut Graph,
        ctx: &ForwardCtx,
        bound: &Bound,
        memory: Var,
        tgt_in: &[usize],
    ) -> (Var, Var) {
        let mut x = self.embed_with_pos(g, bound, tgt_in);
        let mask = causal_mask(tgt_in.len());
        for layer in &self.dec {
            let h = self.ln(g, bound, layer.ln1, x);
            let a = layer
                .self_attn
                .forward(g, ctx, bound, h, h, Some(&mask), self.config.dropout);
            x = g.add(x, a);
            let h = self.ln(g, bound, layer.ln2, x);
            let a = layer
                .cross_attn
                .forward(g, ctx, bound, h, memory, None, self.config.dropout);
            x = g.add(x, a);
            let h = self.ln(g, bound, layer.ln3, x);
            let f = layer.ffn.forward(g, ctx, bound, h, self.config.dropout);
            x = g.add(x, f);
        }
        let hidden = self.ln(g, bound, self.dec_ln, x);
        let logits = quant_linear_node(g, ctx, &self.head, bound, hidden);
        (logits, hidden)
    }

    /// Full teacher-forced pass: encode `src`, decode `tgt_in`.
    pub fn forward(
        &self,
        g: &mut Graph,
        ctx: &ForwardCtx,
        bound: &Bound,
        src: &[usize],
        tgt_in: &[usize],
    ) -> ForwardOutput {
        let memory = self.encode(g, ctx, bound, src);
        let (logits, dec_hidden) = self.decode(g, ctx, bound, memory, tgt_in);
        ForwardOutput {
            logits,
            enc_hidden: memory,
            dec_hidden,
        }
    }

    /// Runs a gradient-free forward pass and returns the teacher signals for
    /// distillation.
    pub fn run_frozen(&self, src: &[usize], tgt_in: &[usize]) -> TeacherOutputs {
        let mut g = Graph::new();
        let ctx = ForwardCtx::new(Mode::Eval);
        let bound = self.params.bind(&mut g);
        let out = self.forward(&mut g, &ctx, &bound, src, tgt_in);
        TeacherOutputs {
            logits: g.value(out.logits).clone(),
            enc_hidden: g.value(out.enc_hidden).clone(),
            dec_hidden: g.value(out.dec_hidden).clone(),
        }
    }

    /// Greedy autoregressive decoding from BOS until EOS or `max_len`
    /// generated tokens; returns the generated ids (no BOS, no EOS). The
    /// source is encoded once; each step re-decodes the growing prefix on the
    /// same graph.
    pub fn greedy_decode(&self, src: &[usize], max_len: usize) -> Vec<usize> {
        let mut g = Graph::new();
        let ctx = ForwardCtx::new(Mode::Eval);
        let bound = self.params.bind(&mut g);
        let memory = self.encode(&mut g, &ctx, &bound, src);
        let mut prefix = vec![BOS];
        let mut out = Vec::new();
        while out.len() < max_len && prefix.len() < self.config.max_seq_len {
            let (logits, _) = self.decode(&mut g, &ctx, &bound, memory, &prefix);
            let lv = g.value(logits);
            let last = &lv.data()[(lv.rows() - 1) * lv.cols()..];
            let tok = argmax_row(last);
            if tok == EOS {
                break;
            }
            out.push(tok);
            prefix.push(tok);
        }
        out
    }

    /// Copies every identically named, identically shaped parameter from
    /// `teacher` (quantizer scales absent from the teacher keep their
    /// placeholder values and await calibration). Architectures must match.
    pub fn init_from(&mut self, teacher: &Model) -> Result<()> {
        let (a, b) = (&self.config, &teacher.config);
        ensure!(
            a.vocab_size == b.vocab_size
                && a.d_model == b.d_model
                && a.n_heads == b.n_heads
                && a.n_enc_layers == b.n_enc_layers
                && a.n_dec_layers == b.n_dec_layers
                && a.d_ffn == b.d_ffn
                && a.max_seq_len == b.max_seq_len,
            "teacher/student architectures differ"
        );
        let mut updates = Vec::new();
        for (id, p) in self.params.iter() {
            if let Some(tid) = teacher.params.lookup(&p.name) {
                let tv = &teacher.params.get(tid).value;
                if tv.shape() == p.value.shape() {
                    updates.push((id, tv.clone()));
                }
            }
        }
        for (id, v) in updates {
            self.params.set_value(id, v);
        }
        Ok(())
    }

    /// Visits every activation-quantizer site in a fixed traversal order.
    pub(crate) fn for_each_act_site(&self, mut f: impl FnMut(&ActQuant)) {
        fn attn(a: &MultiHeadAttention, f: &mut dyn FnMut(&ActQuant)) {
            f(&a.q.act);
            f(&a.k.act);
            f(&a.v.act);
            f(&a.o.act);
            f(&a.qt);
            f(&a.kt);
            f(&a.vt);
            f(&a.probs);
        }
        for l in &self.enc {
            attn(&l.attn, &mut f);
            f(&l.ffn.fc1.act);
            f(&l.ffn.fc2.act);
        }
        for l in &self.dec {
            attn(&l.self_attn, &mut f);
            attn(&l.cross_attn, &mut f);
            f(&l.ffn.fc1.act);
            f(&l.ffn.fc2.act);
        }
        f(&self.head.act);
    }

    /// Visits every quantizable linear layer (the tied head is excluded —
    /// its weight is the embedding table).
    pub(crate) fn for_each_linear(&self, mut f: impl FnMut(&QuantLinear)) {
        fn attn(a: &MultiHeadAttention, f: &mut dyn FnMut(&QuantLinear)) {
            f(&a.q);
            f(&a.k);
            f(&a.v);
            f(&a.o);
        }
        for l in &self.enc {
            attn(&l.attn, &mut f);
            f(&l.ffn.fc1);
            f(&l.ffn.fc2);
        }
        for l in &self.dec {
            attn(&l.self_attn, &mut f);
            attn(&l.cross_attn, &mut f);
            f(&l.ffn.fc1);
            f(&l.ffn.fc2);
        }
    }

    /// Writes the accumulated calibration statistics into the elastic scale
    /// parameters and marks every elastic site initialized. Panics when an
    /// uninitialized site never saw data (the calibration pass must be a
    /// full forward).
    pub fn commit_calibration(&mut self, ctx: &ForwardCtx) {
        let map = ctx.calib.borrow();
        let mut updates = Vec::new();
        self.for_each_act_site(|act| {
            if let ActQuant::Elastic {
                alpha, initialized, ..
            } = act
            {
                if initialized.get() {
                    return;
                }
                let (sum, count) = map.get(&alpha.0).unwrap_or_else(|| {
                    panic!(
                        "activation site {} saw no calibration data",
                        self.params.get(*alpha).name
                    )
                });
                updates.push((*alpha, (sum / *count as f64).max(EPSILON)));
            }
        });
        drop(map);
        for (id, v) in updates {
            self.params.set_value(id, Tensor::scalar(v));
        }
        self.for_each_act_site(|act| {
            if let ActQuant::Elastic { initialized, .. } = act {
                initialized.set(true);
            }
        });
    }

    /// (scale-parameter name, initialized) for every elastic site, traversal
    /// order.
    pub fn act_site_flags(&self) -> Vec<(String, bool)> {
        let mut v = Vec::new();
        self.for_each_act_site(|act| {
            if let ActQuant::Elastic {
                alpha, initialized, ..
            } = act
            {
                v.push((self.params.get(*alpha).name.clone(), initialized.get()));
            }
        });
        v
    }

    /// Sets one site's initialized flag by scale-parameter name; returns
    /// false when no such site exists.
    pub fn set_act_site_flag(&self, name: &str, value: bool) -> bool {
        let mut found = false;
        self.for_each_act_site(|act| {
            if let ActQuant::Elastic {
                alpha, initialized, ..
            } = act
            {
                if self.params.get(*alpha).name == name {
                    initialized.set(value);
                    found = true;
                }
            }
        });
        found
    }

    /// Every quantized weight matrix (embedding table first, then the linear
    /// layers in model order) with a fresh quantization of its master values.
    pub fn quantized_matrices(&self) -> Vec<NamedMatrix> {
        let mut out = Vec::new();
        let maxent = self.ablation.maxent_weights();
        if self.config.bits_embed != 32 {
            let master = self.params.get(self.embed_table).value.clone();
            let quant = quantize_weight_matrix(&master, self.config.bits_embed, maxent);
            out.push(NamedMatrix {
                name: "embed.table".into(),
                master,
                quant,
            });
        }
        self.for_each_linear(|lin| {
            if lin.bits_weight != 32 {
                let master = self.params.get(lin.weight).value.clone();
                let quant = quantize_weight_matrix(&master, lin.bits_weight, lin.maxent);
                out.push(NamedMatrix {
                    name: format!("{}.w", lin.name),
                    master,
                    quant,
                });
            }
        });
        out
    }

    /// Level entropy (nats) of every quantized weight matrix.
    pub fn weight_entropies(&self) -> Vec<(String, f64)> {
        self.quantized_matrices()
            .iter()
            .map(|m| (m.name.clone(), quant_entropy(&m.quant)))
            .collect()
    }
}

/// Additive causal mask: 0 on/below the diagonal, −∞ above.
pub(crate) fn causal_mask(n: usize) -> Tensor {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            data[i * n + j] = f64::NEG_INFINITY;
        }
    }
    Tensor::new(&[n, n], data)
}

/// Index of the row maximum (lowest index wins ties).
pub(crate) fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
