//! Exports a ternary model to the packed deployment format and proves the
//! multiplication-free inference path is bit-identical to the training-time
//! fake-quant forward: same logits, same greedy decodes, a fraction of the
//! bytes.
//!
//! Run with `cargo run --release --example export_and_run_packed`.

use anyhow::Result;
use lowbit::graph::Graph;
use lowbit::model::{Ablation, ForwardCtx, Mode, Model, ModelConfig, PackedModel};
use lowbit::tasks::teacher_forcing;

fn main() -> Result<()> {
    // A fully ternary model. Weights are fresh (training is covered by the
    // other examples); activation scales are calibrated on a probe batch so
    // every quantizer is live.
    let config = ModelConfig {
        vocab_size: 32,
        d_model: 64,
        n_heads: 4,
        n_enc_layers: 2,
        n_dec_layers: 2,
        d_ffn: 128,
        max_seq_len: 16,
        bits_embed: 2,
        bits_weight: 2,
        bits_act: 2,
        dropout: 0.0,
    };
    let mut model = Model::new(config, Ablation::Both, 9)?;
    let probes: &[(&[usize], &[usize])] = &[
        (&[2, 9, 4, 17, 5], &[2, 9, 4, 17, 5]),
        (&[30, 3, 11], &[30, 3, 11]),
    ];
    let ctx = ForwardCtx::new(Mode::Calibrate);
    for (src, tgt) in probes {
        let (tgt_in, _) = teacher_forcing(tgt);
        let mut g = Graph::new();
        let bound = model.params.bind(&mut g);
        model.forward(&mut g, &ctx, &bound, src, &tgt_in);
    }
    model.commit_calibration(&ctx);

    // Export, write, read back.
    let packed = PackedModel::export(&model)?;
    let dir = std::env::temp_dir().join("lowbit_packed_example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.pk");
    packed.save(&path)?;
    let loaded = PackedModel::load(&path)?;
    assert_eq!(loaded, packed, "file round trip must be lossless");

    // Training-time fake-quant forward vs packed popcount forward.
    let (src, tgt) = probes[0];
    let (tgt_in, _) = teacher_forcing(tgt);
    let fake = model.run_frozen(src, &tgt_in);
    let fast = loaded.forward(src, &tgt_in);
    assert_eq!(
        fake.logits.data(),
        fast.data(),
        "packed inference must reproduce the fake-quant logits bit for bit"
    );
    println!("fake-quant and packed logits agree exactly on {} values", fast.len());

    let a = model.greedy_decode(&[2, 9, 4, 17, 5], 14);
    let b = loaded.greedy_decode(&[2, 9, 4, 17, 5], 14);
    assert_eq!(a, b, "greedy decodes must match");
    println!("greedy decodes agree: {a:?}");

    let (packed_bytes, dense_bytes) = (packed.packed_payload_bytes(), packed.dense_payload_bytes());
    println!(
        "weight payload: {packed_bytes} bytes packed vs {dense_bytes} bytes as 32-bit floats \
         ({:.1}x smaller), file at {}",
        dense_bytes as f64 / packed_bytes as f64,
        path.display()
    );
    Ok(())
}
