//! Plot-ready text reports over a model's quantized weight matrices: level
//! proportions, level entropy, and histograms of the master weights.
//!
//! Both reports are tab-separated with a header row, one line per datum, so
//! external plotters can consume them without custom parsing.

use crate::model::Model;
use crate::quant::quant_entropy;

/// One row per quantized matrix: the fraction of negative, zero, and
/// positive levels, plus the level entropy in nats.
pub fn entropy_report(model: &Model) -> String {
    let mut out = String::from("matrix\tp_neg\tp_zero\tp_pos\tentropy_nats\n");
    for m in model.quantized_matrices() {
        let n = m.quant.levels.len() as f64;
        let neg = m.quant.levels.iter().filter(|&&l| l < 0).count() as f64 / n;
        let zero = m.quant.levels.iter().filter(|&&l| l == 0).count() as f64 / n;
        let pos = m.quant.levels.iter().filter(|&&l| l > 0).count() as f64 / n;
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            m.name,
            neg,
            zero,
            pos,
            quant_entropy(&m.quant)
        ));
    }
    out
}

/// `bins` equal-width bins per quantized matrix over its master (real)
/// weights; rows are `matrix, bin index, bin edges, count`.
pub fn histogram_report(model: &Model, bins: usize) -> String {
    assert!(bins > 0, "need at least one histogram bin");
    let mut out = String::from("matrix\tbin\tlo\thi\tcount\n");
    for m in model.quantized_matrices() {
        let data = m.master.data();
        let min = data.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let width = (max - min) / bins as f64;
        let mut counts = vec![0usize; bins];
        for &v in data {
            let b = if width > 0.0 {
                (((v - min) / width) as usize).min(bins - 1)
            } else {
                0
            };
            counts[b] += 1;
        }
        for (b, &count) in counts.iter().enumerate() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                m.name,
                b,
                min + b as f64 * width,
                min + (b + 1) as f64 * width,
                count
            ));
        }
    }
    out
}
