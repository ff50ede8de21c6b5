//! Synthetic sequence-to-sequence tasks and evaluation metrics.
//!
//! Three deterministic toy tasks (copy, reverse, sort) stand in for large
//! seq2seq corpora: they need no data files, have unambiguous references, and
//! are hard enough under aggressive quantization to separate good training
//! recipes from bad ones. Evaluation greedy-decodes every source and reports
//! token/sequence accuracy plus generated-length statistics — the length
//! comparison is the cheap detector for compounding autoregressive error.

use crate::model::{Model, BOS, EOS};
use anyhow::{ensure, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// What the target sequence is, given the source.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    /// Target equals the source.
    Copy,
    /// Target is the source reversed.
    Reverse,
    /// Target is the source's tokens in ascending order.
    SortDigits,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Copy => "copy",
            TaskKind::Reverse => "reverse",
            TaskKind::SortDigits => "sort",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "copy" => TaskKind::Copy,
            "reverse" => TaskKind::Reverse,
            "sort" => TaskKind::SortDigits,
            other => anyhow::bail!("unknown task '{other}' (expected copy, reverse, or sort)"),
        })
    }
}

/// A task instance: token alphabet, length range, and generation seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Alphabet size including the reserved BOS and EOS ids; payload tokens
    /// are drawn from `2..vocab_size`.
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.vocab_size > 2,
            "vocab_size must exceed the two reserved tokens, got {}",
            self.vocab_size
        );
        ensure!(
            0 < self.min_len && self.min_len <= self.max_len,
            "need 0 < min_len <= max_len, got {}..{}",
            self.min_len,
            self.max_len
        );
        Ok(())
    }

    /// Checks that sequences fit a model: BOS and EOS must leave room within
    /// `max_seq_len`.
    pub fn fits(&self, max_seq_len: usize) -> Result<()> {
        self.validate()?;
        ensure!(
            self.max_len < max_seq_len - 2,
            "max_len {} leaves no room for BOS/EOS within max_seq_len {}",
            self.max_len,
            max_seq_len
        );
        Ok(())
    }
}

/// One training or evaluation example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pair {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

/// Generates `n` pairs, deterministically in `spec.seed`.
pub fn generate(spec: &TaskSpec, n: usize) -> Vec<Pair> {
    spec.validate().expect("invalid task spec");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let src: Vec<usize> = (0..len).map(|_| rng.gen_range(2..spec.vocab_size)).collect();
            let tgt = target_for(spec.kind, &src);
            Pair { src, tgt }
        })
        .collect()
}

/// The reference output for one source sequence.
pub fn target_for(kind: TaskKind, src: &[usize]) -> Vec<usize> {
    match kind {
        TaskKind::Copy => src.to_vec(),
        TaskKind::Reverse => src.iter().rev().copied().collect(),
        TaskKind::SortDigits => {
            let mut t = src.to_vec();
            t.sort_unstable();
            t
        }
    }
}

/// Line-oriented text dump: space-separated ids, a tab between source and
/// target, one pair per line.
pub fn dataset_to_text(pairs: &[Pair]) -> String {
    let fmt = |ids: &[usize]| {
        ids.iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    pairs
        .iter()
        .map(|p| format!("{}\t{}\n", fmt(&p.src), fmt(&p.tgt)))
        .collect()
}

/// Accuracy and length metrics of an evaluation run.
#[derive(Clone, Debug)]
pub struct EvalReport {
    /// Matched positions over total reference tokens, left-aligned.
    pub token_accuracy: f64,
    /// Exact-match fraction.
    pub sequence_accuracy: f64,
    pub avg_gen_length: f64,
    pub avg_ref_length: f64,
    /// Level entropy (nats) per quantized weight matrix.
    pub entropies: Vec<(String, f64)>,
}

/// Aggregates metrics from generated outputs against their references.
/// Token accuracy compares positions up to the shorter length and divides by
/// the total reference length, so both truncation and overgeneration lose
/// credit; no alignment search is performed.
pub(crate) fn score_outputs(pairs: &[Pair], outputs: &[Vec<usize>]) -> (f64, f64, f64, f64) {
    assert_eq!(pairs.len(), outputs.len(), "one output per pair required");
    assert!(!pairs.is_empty(), "cannot score an empty dataset");
    let (mut matched, mut ref_total, mut exact, mut gen_total) = (0usize, 0usize, 0usize, 0usize);
    for (pair, gen) in pairs.iter().zip(outputs) {
        matched += gen
            .iter()
            .zip(&pair.tgt)
            .filter(|(a, b)| a == b)
            .count();
        ref_total += pair.tgt.len();
        exact += (gen == &pair.tgt) as usize;
        gen_total += gen.len();
    }
    let n = pairs.len() as f64;
    (
        matched as f64 / ref_total as f64,
        exact as f64 / n,
        gen_total as f64 / n,
        ref_total as f64 / n,
    )
}

/// Greedy-decodes every source with the model and scores the outputs. The
/// decode cap leaves room for BOS and EOS within the model's maximum
/// sequence length.
pub fn evaluate(model: &Model, pairs: &[Pair]) -> EvalReport {
    let cap = model.config.max_seq_len - 2;
    let outputs: Vec<Vec<usize>> = pairs
        .iter()
        .map(|p| model.greedy_decode(&p.src, cap))
        .collect();
    let (token_accuracy, sequence_accuracy, avg_gen_length, avg_ref_length) =
        score_outputs(pairs, &outputs);
    EvalReport {
        token_accuracy,
        sequence_accuracy,
        avg_gen_length,
        avg_ref_length,
        entropies: model.weight_entropies(),
    }
}

/// Decoder input (`BOS` then the reference) and targets (reference then
/// `EOS`) for teacher forcing.
pub fn teacher_forcing(tgt: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut input = Vec::with_capacity(tgt.len() + 1);
    input.push(BOS);
    input.extend_from_slice(tgt);
    let mut labels = Vec::with_capacity(tgt.len() + 1);
    labels.extend_from_slice(tgt);
    labels.push(EOS);
    (input, labels)
}
