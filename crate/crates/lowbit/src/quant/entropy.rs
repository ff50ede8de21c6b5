//! Level-usage entropy of quantized tensors.
//!
//! The max-entropy quantizers are designed to spread mass across their
//! levels; this module measures how well that works on real tensors, in
//! nats, so reports can compare against the ideal `ln(levels)`.

use super::QuantizedTensor;
use std::collections::BTreeMap;

/// Occurrence count per distinct level value, in ascending level order.
pub fn level_counts(q: &QuantizedTensor) -> Vec<(i32, usize)> {
    let mut counts: BTreeMap<i32, usize> = BTreeMap::new();
    for &l in &q.levels {
        *counts.entry(l).or_insert(0) += 1;
    }
    counts.into_iter().collect()
}

/// Shannon entropy of the empirical level distribution, in nats, with the
/// convention 0·ln 0 = 0. A tensor using one level has entropy 0; a ternary
/// tensor splitting evenly across three levels reaches ln 3 ≈ 1.0986.
pub fn quant_entropy(q: &QuantizedTensor) -> f64 {
    let n = q.levels.len() as f64;
    assert!(n > 0.0, "entropy of an empty tensor");
    level_counts(q)
        .iter()
        .map(|&(_, c)| {
            let p = c as f64 / n;
            if p > 0.0 {
                -p * p.ln()
            } else {
                0.0
            }
        })
        .sum()
}
