//! Shows the elastic activation quantizers end to end: statistics-based
//! initialization of the scale, quantization in both ranges, and the scale
//! gradient that lets training tune the clipping window.
//!
//! Run with `cargo run --release --example elastic_activations`.

use lowbit::quant::{
    act_alpha_init, elastic_grad_alpha, elastic_ternarize, level_counts, ActRange,
};
use lowbit::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn proportions(levels: &[(i32, usize)], total: usize) -> String {
    levels
        .iter()
        .map(|&(l, c)| format!("{l:+}:{:.3}", c as f64 / total as f64))
        .collect::<Vec<_>>()
        .join(" ")
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // A signed activation tensor (e.g. a pre-projection hidden state).
    let signed: Vec<f64> = (0..4096).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let signed = Tensor::new(&[64, 64], signed);
    // A nonnegative one (e.g. a post-ReLU hidden state).
    let relu = signed.map(|v| v.max(0.0));

    println!("signed tensor, ternary quantization:");
    let alpha0 = act_alpha_init(&signed, 2, ActRange::Signed);
    let q = elastic_ternarize(&signed, alpha0, ActRange::Signed);
    println!("  init alpha = (4/3)·mean|x − mean(x)| = {alpha0:.4}");
    println!(
        "  levels {{{}}} (centered, clipped to [-1, 1] before rounding)",
        proportions(&level_counts(&q), q.len())
    );

    println!("\nnonnegative tensor, ternary quantization:");
    let alpha0 = act_alpha_init(&relu, 2, ActRange::NonNeg);
    let q = elastic_ternarize(&relu, alpha0, ActRange::NonNeg);
    println!("  init alpha = {alpha0:.4} (no centering; levels 0..2)");
    println!(
        "  levels {{{}}}",
        proportions(&level_counts(&q), q.len())
    );

    // The elastic gradient: when the scale underestimates the data span,
    // clipped elements push alpha upward (positive gradient descent step
    // direction depends on the loss; here we use an all-ones upstream to
    // read the raw sign).
    println!("\nscale gradient at different alphas (all-ones upstream):");
    let ones = Tensor::full(&[64, 64], 1.0);
    for alpha in [0.2, alpha0, 5.0] {
        let q = elastic_ternarize(&relu, alpha, ActRange::NonNeg);
        let g = elastic_grad_alpha(&ones, &relu, &q);
        println!("  alpha={alpha:<7.4} dL/dalpha={g:+.2}");
    }
    println!(
        "\nToo-small scales see mostly clipped elements (gradient dominated by \
         \nthe saturated level), too-large scales see rounding residue — the \
         \ngradient pulls the clipping window toward the data."
    );
}
