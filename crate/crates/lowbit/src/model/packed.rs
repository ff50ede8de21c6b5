//! Bit-packed deployment models: multiplication-free forward passes that
//! reproduce the fake-quantized training forward bit for bit.
//!
//! Exporting quantizes every weight matrix once, packs the levels into bit
//! planes, and keeps only deployment-precision row scales; biases, layernorm
//! parameters, positional embeddings, and activation scales stay full
//! precision. Inference quantizes activations with the stored scales, runs
//! every matrix product through the popcount kernels, and applies the same
//! scaling helpers as training — so a calibrated model produces identical
//! outputs through either path, and a file round trip changes nothing.

use super::attention::attn_scale;
use super::linear::{
    deploy_scale, quantize_act_tensor, quantize_weight_matrix, scale_level_grid, ActQuant,
    QuantLinear,
};
use super::transformer::{argmax_row, causal_mask, Model, LN_EPS};
use super::{Ablation, ModelConfig, BOS, EOS};
use crate::graph::{add_row_value, add_tensors, layernorm_value, softmax_in_place};
use crate::kernels::{gemm_raw, pack, PackedMatrix};
use crate::params::ParamSet;
use crate::quant::{ActRange, QuantizedTensor};
use crate::tensor::Tensor;
use anyhow::{bail, ensure, Context, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"LOWBITPK";
const VERSION: u32 = 1;

/// Activation quantizer of one site, reduced to what inference needs.
#[derive(Clone, Debug, PartialEq)]
enum PackedAct {
    /// Learned scale, frozen at export.
    Elastic { alpha: f64, bits: u8, range: ActRange },
    /// Statistics-based scale, recomputed from each tensor.
    Baseline { bits: u8 },
}

#[derive(Debug, PartialEq)]
struct PackedLinear {
    weight: PackedMatrix,
    bias: Option<Tensor>,
    act: PackedAct,
}

#[derive(Debug, PartialEq)]
struct PackedAttention {
    q: PackedLinear,
    k: PackedLinear,
    v: PackedLinear,
    o: PackedLinear,
    qt: PackedAct,
    kt: PackedAct,
    vt: PackedAct,
    probs: PackedAct,
    n_heads: usize,
    d_head: usize,
}

#[derive(Debug, PartialEq)]
struct PackedFfn {
    fc1: PackedLinear,
    fc2: PackedLinear,
}

#[derive(Debug, PartialEq)]
struct PackedEncoderLayer {
    ln1: (Tensor, Tensor),
    attn: PackedAttention,
    ln2: (Tensor, Tensor),
    ffn: PackedFfn,
}

#[derive(Debug, PartialEq)]
struct PackedDecoderLayer {
    ln1: (Tensor, Tensor),
    self_attn: PackedAttention,
    ln2: (Tensor, Tensor),
    cross_attn: PackedAttention,
    ln3: (Tensor, Tensor),
    ffn: PackedFfn,
}

/// A fully quantized model in its deployed form: bit-plane weights plus the
/// full-precision side parameters.
#[derive(Debug, PartialEq)]
pub struct PackedModel {
    pub config: ModelConfig,
    pub ablation: Ablation,
    /// Tied embedding/output table as one packed matrix.
    embed_table: PackedMatrix,
    embed_pos: Tensor,
    enc: Vec<PackedEncoderLayer>,
    dec: Vec<PackedDecoderLayer>,
    enc_ln: (Tensor, Tensor),
    dec_ln: (Tensor, Tensor),
    head_act: PackedAct,
}

fn export_act(params: &ParamSet, act: &ActQuant) -> Result<PackedAct> {
    Ok(match act {
        ActQuant::Identity => bail!("a full-precision activation site has no packed form"),
        ActQuant::Elastic {
            alpha, bits, range, ..
        } => PackedAct::Elastic {
            alpha: params.get(*alpha).value.item(),
            bits: *bits,
            range: *range,
        },
        ActQuant::Baseline { bits } => PackedAct::Baseline { bits: *bits },
    })
}

fn export_weight(params: &ParamSet, weight: crate::params::ParamId, bits: u8, maxent: bool) -> Result<PackedMatrix> {
    let q = quantize_weight_matrix(&params.get(weight).value, bits, maxent);
    let mut p = pack(&q)?;
    for s in p.row_scales.iter_mut() {
        *s = deploy_scale(*s);
    }
    Ok(p)
}

fn export_linear(params: &ParamSet, lin: &QuantLinear) -> Result<PackedLinear> {
    Ok(PackedLinear {
        weight: export_weight(params, lin.weight, lin.bits_weight, lin.maxent)?,
        bias: lin.bias.map(|b| params.get(b).value.clone()),
        act: export_act(params, &lin.act)?,
    })
}

fn export_attention(
    params: &ParamSet,
    a: &super::attention::MultiHeadAttention,
) -> Result<PackedAttention> {
    Ok(PackedAttention {
        q: export_linear(params, &a.q)?,
        k: export_linear(params, &a.k)?,
        v: export_linear(params, &a.v)?,
        o: export_linear(params, &a.o)?,
        qt: export_act(params, &a.qt)?,
        kt: export_act(params, &a.kt)?,
        vt: export_act(params, &a.vt)?,
        probs: export_act(params, &a.probs)?,
        n_heads: a.n_heads,
        d_head: a.d_head,
    })
}

fn export_ffn(params: &ParamSet, f: &super::attention::FeedForward) -> Result<PackedFfn> {
    Ok(PackedFfn {
        fc1: export_linear(params, &f.fc1)?,
        fc2: export_linear(params, &f.fc2)?,
    })
}

fn ln_pair(params: &ParamSet, ids: (crate::params::ParamId, crate::params::ParamId)) -> (Tensor, Tensor) {
    (params.get(ids.0).value.clone(), params.get(ids.1).value.clone())
}

/// Columns `c0..c1` of a per-tensor quantized matrix, level-preserving.
fn slice_level_cols(q: &QuantizedTensor, c0: usize, c1: usize) -> QuantizedTensor {
    let (rows, cols) = (q.rows(), q.cols());
    let w = c1 - c0;
    let mut levels = Vec::with_capacity(rows * w);
    for r in 0..rows {
        levels.extend_from_slice(&q.levels[r * cols + c0..r * cols + c1]);
    }
    QuantizedTensor {
        shape: vec![rows, w],
        levels,
        alpha: q.alpha.clone(),
        mu: q.mu.clone(),
        scheme: q.scheme,
    }
}

/// Transpose of a per-tensor quantized matrix, level-preserving.
fn transpose_levels(q: &QuantizedTensor) -> QuantizedTensor {
    let (rows, cols) = (q.rows(), q.cols());
    let mut levels = vec![0i32; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            levels[c * rows + r] = q.levels[r * cols + c];
        }
    }
    QuantizedTensor {
        shape: vec![cols, rows],
        levels,
        alpha: q.alpha.clone(),
        mu: q.mu.clone(),
        scheme: q.scheme,
    }
}

/// Side-by-side concatenation of equally tall matrices.
fn concat_cols_values(parts: &[Tensor]) -> Tensor {
    let rows = parts[0].rows();
    let total: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = vec![0.0; rows * total];
    let mut offset = 0;
    for p in parts {
        let w = p.cols();
        for r in 0..rows {
            data[r * total + offset..r * total + offset + w]
                .copy_from_slice(&p.data()[r * w..(r + 1) * w]);
        }
        offset += w;
    }
    Tensor::new(&[rows, total], data)
}

impl PackedModel {
    /// Quantizes and packs every weight matrix of `model`. Requires a fully
    /// 1- or 2-bit configuration — wider tensors have no bit-plane form.
    pub fn export(model: &Model) -> Result<PackedModel> {
        let c = model.config.clone();
        for (what, bits) in [
            ("embedding", c.bits_embed),
            ("weight", c.bits_weight),
            ("activation", c.bits_act),
        ] {
            ensure!(
                bits == 1 || bits == 2,
                "{what} width is {bits} bits; only fully 1- or 2-bit models can be packed"
            );
        }
        let p = &model.params;
        Ok(PackedModel {
            embed_table: export_weight(p, model.embed_table, c.bits_embed, model.ablation.maxent_weights())?,
            embed_pos: p.get(model.embed_pos).value.clone(),
            enc: model
                .enc
                .iter()
                .map(|l| {
                    Ok(PackedEncoderLayer {
                        ln1: ln_pair(p, l.ln1),
                        attn: export_attention(p, &l.attn)?,
                        ln2: ln_pair(p, l.ln2),
                        ffn: export_ffn(p, &l.ffn)?,
                    })
                })
                .collect::<Result<_>>()?,
            dec: model
                .dec
                .iter()
                .map(|l| {
                    Ok(PackedDecoderLayer {
                        ln1: ln_pair(p, l.ln1),
                        self_attn: export_attention(p, &l.self_attn)?,
                        ln2: ln_pair(p, l.ln2),
                        cross_attn: export_attention(p, &l.cross_attn)?,
                        ln3: ln_pair(p, l.ln3),
                        ffn: export_ffn(p, &l.ffn)?,
                    })
                })
                .collect::<Result<_>>()?,
            enc_ln: ln_pair(p, model.enc_ln),
            dec_ln: ln_pair(p, model.dec_ln),
            head_act: export_act(p, &model.head.act)?,
            config: c,
            ablation: model.ablation,
        })
    }

    fn quantize_site(act: &PackedAct, x: &Tensor) -> QuantizedTensor {
        match act {
            PackedAct::Elastic { alpha, bits, range } => {
                quantize_act_tensor(x, *bits, true, *alpha, *range)
            }
            PackedAct::Baseline { bits } => {
                quantize_act_tensor(x, *bits, false, 0.0, ActRange::Signed)
            }
        }
    }

    /// One packed linear layer: quantize the input, popcount-GEMM against the
    /// packed weight planes, scale, add bias.
    fn linear(&self, lin: &PackedLinear, x: &Tensor) -> Tensor {
        let qx = Self::quantize_site(&lin.act, x);
        let px = pack(&qx).expect("activation levels fit a packed scheme");
        let raw = gemm_raw(&lin.weight, &px);
        let y = scale_level_grid(&raw, lin.weight.rows, x.rows(), &lin.weight.row_scales, qx.alpha[0]);
        match &lin.bias {
            Some(b) => add_row_value(&y, b),
            None => y,
        }
    }

    fn attention(
        &self,
        a: &PackedAttention,
        x_q: &Tensor,
        x_kv: &Tensor,
        mask: Option<&Tensor>,
    ) -> Tensor {
        let q = self.linear(&a.q, x_q);
        let k = self.linear(&a.k, x_kv);
        let v = self.linear(&a.v, x_kv);
        let qq = Self::quantize_site(&a.qt, &q);
        let kq = Self::quantize_site(&a.kt, &k);
        let vq = Self::quantize_site(&a.vt, &v);
        let scale = attn_scale(a.d_head);
        let (tq, tk) = (x_q.rows(), x_kv.rows());

        let mut heads = Vec::with_capacity(a.n_heads);
        for h in 0..a.n_heads {
            let (c0, c1) = (h * a.d_head, (h + 1) * a.d_head);
            let qh = pack(&slice_level_cols(&qq, c0, c1)).expect("signed levels pack");
            let kh = pack(&slice_level_cols(&kq, c0, c1)).expect("signed levels pack");
            let raw = gemm_raw(&kh, &qh);
            let scores = scale_level_grid(&raw, tk, tq, &vec![kq.alpha[0]; tk], qq.alpha[0]);
            let mut scores = scores.map(|x| x * scale);
            if let Some(m) = mask {
                scores = add_tensors(&scores, m);
            }
            let mut p = scores.to_vec();
            for row in p.chunks_mut(tk) {
                softmax_in_place(row);
            }
            let pq = Self::quantize_site(&a.probs, &Tensor::new(&[tq, tk], p));
            let vt = pack(&transpose_levels(&slice_level_cols(&vq, c0, c1)))
                .expect("signed levels pack");
            let pp = pack(&pq).expect("probability levels pack");
            let raw = gemm_raw(&vt, &pp);
            heads.push(scale_level_grid(
                &raw,
                a.d_head,
                tq,
                &vec![vq.alpha[0]; a.d_head],
                pq.alpha[0],
            ));
        }
        self.linear(&a.o, &concat_cols_values(&heads))
    }

    fn ffn(&self, f: &PackedFfn, x: &Tensor) -> Tensor {
        let h = self.linear(&f.fc1, x);
        let h = h.map(|v| v.max(0.0));
        self.linear(&f.fc2, &h)
    }

    fn embed(&self, ids: &[usize]) -> Tensor {
        assert!(!ids.is_empty(), "empty token sequence");
        assert!(
            ids.len() <= self.config.max_seq_len,
            "sequence length {} exceeds max_seq_len {}",
            ids.len(),
            self.config.max_seq_len
        );
        let cols = self.config.d_model;
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            assert!(id < self.embed_table.rows, "token {id} out of vocabulary");
            let a = self.embed_table.row_scales[id];
            for c in 0..cols {
                data.push(a * self.embed_table.level_at(id, c) as f64);
            }
        }
        let e = Tensor::new(&[ids.len(), cols], data);
        let pos = Tensor::new(
            &[ids.len(), cols],
            self.embed_pos.data()[..ids.len() * cols].to_vec(),
        );
        add_tensors(&e, &pos)
    }

    /// Encoder memory for a source sequence.
    pub fn encode(&self, src: &[usize]) -> Tensor {
        let mut x = self.embed(src);
        for layer in &self.enc {
            let h = layernorm_value(&x, &layer.ln1.0, &layer.ln1.1, LN_EPS);
            x = add_tensors(&x, &self.attention(&layer.attn, &h, &h, None));
            let h = layernorm_value(&x, &layer.ln2.0, &layer.ln2.1, LN_EPS);
            x = add_tensors(&x, &self.ffn(&layer.ffn, &h));
        }
        layernorm_value(&x, &self.enc_ln.0, &self.enc_ln.1, LN_EPS)
    }

    /// Logits for a teacher-forced target prefix against encoded memory.
    pub fn decode(&self, memory: &Tensor, tgt_in: &[usize]) -> Tensor {
        let mut x = self.embed(tgt_in);
        let mask = causal_mask(tgt_in.len());
        for layer in &self.dec {
            let h = layernorm_value(&x, &layer.ln1.0, &layer.ln1.1, LN_EPS);
            x = add_tensors(&x, &self.attention(&layer.self_attn, &h, &h, Some(&mask)));
            let h = layernorm_value(&x, &layer.ln2.0, &layer.ln2.1, LN_EPS);
            x = add_tensors(&x, &self.attention(&layer.cross_attn, &h, memory, None));
            let h = layernorm_value(&x, &layer.ln3.0, &layer.ln3.1, LN_EPS);
            x = add_tensors(&x, &self.ffn(&layer.ffn, &h));
        }
        let hidden = layernorm_value(&x, &self.dec_ln.0, &self.dec_ln.1, LN_EPS);
        let qx = Self::quantize_site(&self.head_act, &hidden);
        let px = pack(&qx).expect("activation levels fit a packed scheme");
        let raw = gemm_raw(&self.embed_table, &px);
        scale_level_grid(
            &raw,
            self.embed_table.rows,
            hidden.rows(),
            &self.embed_table.row_scales,
            qx.alpha[0],
        )
    }

    /// Full teacher-forced pass returning `[tgt_len, vocab]` logits.
    pub fn forward(&self, src: &[usize], tgt_in: &[usize]) -> Tensor {
        let memory = self.encode(src);
        self.decode(&memory, tgt_in)
    }

    /// Greedy decoding, same contract as the training model's: generated ids
    /// without BOS or EOS, capped at `max_len`.
    pub fn greedy_decode(&self, src: &[usize], max_len: usize) -> Vec<usize> {
        let memory = self.encode(src);
        let mut prefix = vec![BOS];
        let mut out = Vec::new();
        while out.len() < max_len && prefix.len() < self.config.max_seq_len {
            let logits = self.decode(&memory, &prefix);
            let last = &logits.data()[(logits.rows() - 1) * logits.cols()..];
            let tok = argmax_row(last);
            if tok == EOS {
                break;
            }
            out.push(tok);
            prefix.push(tok);
        }
        out
    }

    fn matrices(&self) -> Vec<&PackedMatrix> {
        fn attn<'a>(out: &mut Vec<&'a PackedMatrix>, a: &'a PackedAttention) {
            out.extend([&a.q.weight, &a.k.weight, &a.v.weight, &a.o.weight]);
        }
        let mut out = vec![&self.embed_table];
        for l in &self.enc {
            attn(&mut out, &l.attn);
            out.push(&l.ffn.fc1.weight);
            out.push(&l.ffn.fc2.weight);
        }
        for l in &self.dec {
            attn(&mut out, &l.self_attn);
            attn(&mut out, &l.cross_attn);
            out.push(&l.ffn.fc1.weight);
            out.push(&l.ffn.fc2.weight);
        }
        out
    }

    /// Bytes the packed weight matrices occupy in the file format.
    pub fn packed_payload_bytes(&self) -> usize {
        self.matrices().iter().map(|m| m.file_size()).sum()
    }

    /// Bytes a 32-bit float serialization of the same matrices would occupy.
    pub fn dense_payload_bytes(&self) -> usize {
        self.matrices().iter().map(|m| m.rows * m.cols * 4).sum()
    }

    /// Serializes the whole model (packed planes + full-precision side
    /// parameters) to the deployment file format.
    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        write_config(out, &self.config)?;
        write_str(out, self.ablation.name())?;
        self.embed_table.write_to(out)?;
        write_tensor(out, &self.embed_pos)?;
        for l in &self.enc {
            write_ln(out, &l.ln1)?;
            write_attention(out, &l.attn)?;
            write_ln(out, &l.ln2)?;
            write_ffn(out, &l.ffn)?;
        }
        for l in &self.dec {
            write_ln(out, &l.ln1)?;
            write_attention(out, &l.self_attn)?;
            write_ln(out, &l.ln2)?;
            write_attention(out, &l.cross_attn)?;
            write_ln(out, &l.ln3)?;
            write_ffn(out, &l.ffn)?;
        }
        write_ln(out, &self.enc_ln)?;
        write_ln(out, &self.dec_ln)?;
        write_act(out, &self.head_act)?;
        Ok(())
    }

    /// Reads a model back from the deployment file format.
    pub fn read_from(input: &mut impl Read) -> Result<PackedModel> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        ensure!(&magic == MAGIC, "not a packed model file (bad magic)");
        let version = read_u32(input)?;
        ensure!(version == VERSION, "unsupported packed file version {version}");
        let config = read_config(input)?;
        config.validate()?;
        let ablation = Ablation::parse(&read_str(input)?)?;
        let embed_table = PackedMatrix::read_from(input)?;
        ensure!(
            embed_table.rows == config.vocab_size && embed_table.cols == config.d_model,
            "embedding table is {}x{}, config says {}x{}",
            embed_table.rows,
            embed_table.cols,
            config.vocab_size,
            config.d_model
        );
        let embed_pos = read_tensor(input)?;
        let (n_heads, d_head) = (config.n_heads, config.d_model / config.n_heads);
        let mut enc = Vec::with_capacity(config.n_enc_layers);
        for _ in 0..config.n_enc_layers {
            enc.push(PackedEncoderLayer {
                ln1: read_ln(input)?,
                attn: read_attention(input, n_heads, d_head)?,
                ln2: read_ln(input)?,
                ffn: read_ffn(input)?,
            });
        }
        let mut dec = Vec::with_capacity(config.n_dec_layers);
        for _ in 0..config.n_dec_layers {
            dec.push(PackedDecoderLayer {
                ln1: read_ln(input)?,
                self_attn: read_attention(input, n_heads, d_head)?,
                ln2: read_ln(input)?,
                cross_attn: read_attention(input, n_heads, d_head)?,
                ln3: read_ln(input)?,
                ffn: read_ffn(input)?,
            });
        }
        Ok(PackedModel {
            config,
            ablation,
            embed_table,
            embed_pos,
            enc,
            dec,
            enc_ln: read_ln(input)?,
            dec_ln: read_ln(input)?,
            head_act: read_act(input)?,
        })
    }

    /// Writes the model to a file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out)?;
        Ok(())
    }

    /// Loads a model from a file.
    pub fn load(path: &Path) -> Result<PackedModel> {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        PackedModel::read_from(&mut BufReader::new(file))
            .with_context(|| format!("reading packed model {}", path.display()))
    }
}

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u8(input: &mut impl Read) -> Result<u8> {
    let mut buf = [0u8; 1];
    input.read_exact(&mut buf)?;
    Ok(buf[0])
}

fn read_f64(input: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn write_str(out: &mut impl Write, s: &str) -> Result<()> {
    ensure!(s.len() < 256, "string too long for the file format");
    out.write_all(&[s.len() as u8])?;
    out.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str(input: &mut impl Read) -> Result<String> {
    let len = read_u8(input)? as usize;
    let mut buf = vec![0u8; len];
    input.read_exact(&mut buf)?;
    Ok(String::from_utf8(buf)?)
}

fn write_config(out: &mut impl Write, c: &ModelConfig) -> Result<()> {
    for v in [
        c.vocab_size,
        c.d_model,
        c.n_heads,
        c.n_enc_layers,
        c.n_dec_layers,
        c.d_ffn,
        c.max_seq_len,
    ] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    out.write_all(&[c.bits_embed, c.bits_weight, c.bits_act])?;
    out.write_all(&c.dropout.to_le_bytes())?;
    Ok(())
}

fn read_config(input: &mut impl Read) -> Result<ModelConfig> {
    let mut dims = [0usize; 7];
    for d in dims.iter_mut() {
        *d = read_u32(input)? as usize;
    }
    let (bits_embed, bits_weight, bits_act) = (read_u8(input)?, read_u8(input)?, read_u8(input)?);
    let dropout = read_f64(input)?;
    Ok(ModelConfig {
        vocab_size: dims[0],
        d_model: dims[1],
        n_heads: dims[2],
        n_enc_layers: dims[3],
        n_dec_layers: dims[4],
        d_ffn: dims[5],
        max_seq_len: dims[6],
        bits_embed,
        bits_weight,
        bits_act,
        dropout,
    })
}

fn write_tensor(out: &mut impl Write, t: &Tensor) -> Result<()> {
    out.write_all(&[t.shape().len() as u8])?;
    for &d in t.shape() {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_tensor(input: &mut impl Read) -> Result<Tensor> {
    let ndim = read_u8(input)? as usize;
    ensure!(ndim <= 2, "tensor rank {ndim} not supported by the file format");
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(read_u32(input)? as usize);
    }
    let len: usize = shape.iter().product();
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        data.push(read_f64(input)?);
    }
    Ok(Tensor::new(&shape, data))
}

fn write_ln(out: &mut impl Write, ln: &(Tensor, Tensor)) -> Result<()> {
    write_tensor(out, &ln.0)?;
    write_tensor(out, &ln.1)
}

fn read_ln(input: &mut impl Read) -> Result<(Tensor, Tensor)> {
    Ok((read_tensor(input)?, read_tensor(input)?))
}

fn write_act(out: &mut impl Write, act: &PackedAct) -> Result<()> {
    match act {
        PackedAct::Elastic { alpha, bits, range } => {
            let range_tag = match range {
                ActRange::Signed => 0u8,
                ActRange::NonNeg => 1u8,
            };
            out.write_all(&[0u8, *bits, range_tag])?;
            out.write_all(&alpha.to_le_bytes())?;
        }
        PackedAct::Baseline { bits } => out.write_all(&[1u8, *bits])?,
    }
    Ok(())
}

fn read_act(input: &mut impl Read) -> Result<PackedAct> {
    Ok(match read_u8(input)? {
        0 => {
            let bits = read_u8(input)?;
            let range = match read_u8(input)? {
                0 => ActRange::Signed,
                1 => ActRange::NonNeg,
                other => bail!("unknown activation range tag {other}"),
            };
            PackedAct::Elastic {
                alpha: read_f64(input)?,
                bits,
                range,
            }
        }
        1 => PackedAct::Baseline {
            bits: read_u8(input)?,
        },
        other => bail!("unknown activation quantizer tag {other}"),
    })
}

fn write_linear(out: &mut impl Write, lin: &PackedLinear) -> Result<()> {
    lin.weight.write_to(out)?;
    match &lin.bias {
        Some(b) => {
            out.write_all(&[1u8])?;
            write_tensor(out, b)?;
        }
        None => out.write_all(&[0u8])?,
    }
    write_act(out, &lin.act)
}

fn read_linear(input: &mut impl Read) -> Result<PackedLinear> {
    let weight = PackedMatrix::read_from(input)?;
    let bias = match read_u8(input)? {
        0 => None,
        _ => Some(read_tensor(input)?),
    };
    Ok(PackedLinear {
        weight,
        bias,
        act: read_act(input)?,
    })
}

fn write_attention(out: &mut impl Write, a: &PackedAttention) -> Result<()> {
    for lin in [&a.q, &a.k, &a.v, &a.o] {
        write_linear(out, lin)?;
    }
    for act in [&a.qt, &a.kt, &a.vt, &a.probs] {
        write_act(out, act)?;
    }
    Ok(())
}

fn read_attention(input: &mut impl Read, n_heads: usize, d_head: usize) -> Result<PackedAttention> {
    Ok(PackedAttention {
        q: read_linear(input)?,
        k: read_linear(input)?,
        v: read_linear(input)?,
        o: read_linear(input)?,
        qt: read_act(input)?,
        kt: read_act(input)?,
        vt: read_act(input)?,
        probs: read_act(input)?,
        n_heads,
        d_head,
    })
}

fn write_ffn(out: &mut impl Write, f: &PackedFfn) -> Result<()> {
    write_linear(out, &f.fc1)?;
    write_linear(out, &f.fc2)
}

fn read_ffn(input: &mut impl Read) -> Result<PackedFfn> {
    Ok(PackedFfn {
        fc1: read_linear(input)?,
        fc2: read_linear(input)?,
    })
}
