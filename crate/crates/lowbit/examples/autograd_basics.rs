//! A tour of the tape-based autograd engine: build a tiny layer-normalized
//! linear layer, backpropagate a loss, and confirm one gradient against a
//! central finite difference.
//!
//! Run with `cargo run --release --example autograd_basics`.

use lowbit::graph::Graph;
use lowbit::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Loss of `mse(layernorm(x·Wᵀ + b), target)` for given parameter values.
fn forward_loss(x: &Tensor, w: &Tensor, b: &Tensor, target: &Tensor) -> f64 {
    let mut g = Graph::new();
    let (x, w, b) = (g.leaf(x.clone()), g.leaf(w.clone()), g.leaf(b.clone()));
    let gamma = g.leaf(Tensor::full(&[4], 1.0));
    let beta = g.leaf(Tensor::zeros(&[4]));
    let wt = g.transpose(w);
    let pre = g.matmul(x, wt);
    let pre = g.add_row(pre, b);
    let normed = g.layernorm(pre, gamma, beta, 1e-5);
    let t = g.leaf(target.clone());
    let loss = g.mse(normed, t);
    g.value(loss).item()
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rand = |shape: &[usize], rng: &mut ChaCha8Rng| {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    };
    let x = rand(&[3, 5], &mut rng); // 3 positions, 5 features
    let w = rand(&[4, 5], &mut rng); // 4 outputs
    let b = rand(&[4], &mut rng);
    let target = rand(&[3, 4], &mut rng);

    // Forward + backward on the tape.
    let mut g = Graph::new();
    let (xv, wv, bv) = (g.leaf(x.clone()), g.leaf(w.clone()), g.leaf(b.clone()));
    let gamma = g.leaf(Tensor::full(&[4], 1.0));
    let beta = g.leaf(Tensor::zeros(&[4]));
    let wt = g.transpose(wv);
    let pre = g.matmul(xv, wt);
    let pre = g.add_row(pre, bv);
    let normed = g.layernorm(pre, gamma, beta, 1e-5);
    let tv = g.leaf(target.clone());
    let loss = g.mse(normed, tv);
    println!("loss = {:.6} ({} tape nodes)", g.value(loss).item(), g.len());

    let grads = g.backward(loss);
    let gw = grads.get(wv).expect("weight gradient");
    println!("dL/dW has shape {:?}", gw.shape());

    // Check dL/dW[2,3] against a central finite difference.
    let (i, j) = (2, 3);
    let idx = i * 5 + j;
    let h = 1e-6;
    let mut wp = w.to_vec();
    wp[idx] += h;
    let mut wm = w.to_vec();
    wm[idx] -= h;
    let fd = (forward_loss(&x, &Tensor::new(&[4, 5], wp), &b, &target)
        - forward_loss(&x, &Tensor::new(&[4, 5], wm), &b, &target))
        / (2.0 * h);
    let ad = gw.get2(i, j);
    println!("dL/dW[{i},{j}]: autograd {ad:+.8}  finite-diff {fd:+.8}");
    let rel = ((ad - fd) / fd.abs().max(1e-12)).abs();
    assert!(rel < 1e-5, "gradients disagree: rel err {rel}");
    println!("agreement to rel err {rel:.2e} — the tape differentiates the whole chain");
}
