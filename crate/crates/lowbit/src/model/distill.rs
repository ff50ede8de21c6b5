//! The teacher–student training objective: hard-label cross-entropy plus
//! temperature-softened KL to the teacher's logits plus final hidden-state
//! matching.

use super::transformer::ForwardOutput;
use crate::graph::{softmax_in_place, Graph, Var};
use crate::tensor::Tensor;

/// Loss weights and softmax temperature for distillation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KdConfig {
    /// Weight of the softened-logit KL term.
    pub lambda_kd: f64,
    /// Weight of the hidden-state MSE term.
    pub lambda_h: f64,
    /// Softmax temperature for both teacher and student logits.
    pub temperature: f64,
}

impl Default for KdConfig {
    fn default() -> Self {
        KdConfig {
            lambda_kd: 1.0,
            lambda_h: 1.0,
            temperature: 2.0,
        }
    }
}

/// Frozen teacher signals for one sequence: output logits plus the final
/// encoder and decoder hidden states. Plain tensors — nothing here receives
/// gradients.
#[derive(Clone, Debug)]
pub struct TeacherOutputs {
    pub logits: Tensor,
    pub enc_hidden: Tensor,
    pub dec_hidden: Tensor,
}

/// Builds the distillation loss
/// `CE(student, labels) + λ_kd·T²·KL(teacher_T ‖ student_T) + λ_h·hidden-MSE`
/// as a graph node. The KL is averaged over positions; the hidden term
/// averages the encoder and decoder MSEs. Terms with zero weight are not
/// built.
pub fn distill_loss(
    g: &mut Graph,
    student: &ForwardOutput,
    teacher: &TeacherOutputs,
    targets: &[usize],
    kd: &KdConfig,
) -> Var {
    let mut loss = g.cross_entropy(student.logits, targets);

    if kd.lambda_kd != 0.0 {
        let t = kd.temperature;
        assert!(t > 0.0, "temperature must be positive, got {t}");
        let tl = &teacher.logits;
        assert_eq!(
            tl.shape(),
            g.value(student.logits).shape(),
            "teacher/student logit shapes differ"
        );
        let (rows, cols) = (tl.rows(), tl.cols());
        // Teacher probabilities at temperature T, and their negative entropy
        // Σ p·ln p — the constant part of the KL.
        let mut pt = Vec::with_capacity(tl.len());
        let mut neg_entropy = 0.0;
        for r in 0..rows {
            let mut row: Vec<f64> = tl.data()[r * cols..(r + 1) * cols]
                .iter()
                .map(|&v| v / t)
                .collect();
            softmax_in_place(&mut row);
            for &p in &row {
                if p > 0.0 {
                    neg_entropy += p * p.ln();
                }
            }
            pt.extend(row);
        }
        let positions = rows as f64;
        // KL = Σ p(ln p − ln q), per position: the constant Σ p·ln p minus
        // the teacher-weighted student log-probabilities.
        let s_scaled = g.scale(student.logits, 1.0 / t);
        let log_q = g.log_softmax_rows(s_scaled);
        let pt_leaf = g.leaf(Tensor::new(&[rows, cols], pt));
        let weighted = g.mul(pt_leaf, log_q);
        let cross = g.sum_all(weighted);
        let neg_cross = g.scale(cross, -1.0 / positions);
        let const_term = g.leaf(Tensor::scalar(neg_entropy / positions));
        let kl = g.add(const_term, neg_cross);
        let kd_term = g.scale(kl, kd.lambda_kd * t * t);
        loss = g.add(loss, kd_term);
    }

    if kd.lambda_h != 0.0 {
        let te = g.leaf(teacher.enc_hidden.clone());
        let td = g.leaf(teacher.dec_hidden.clone());
        let mse_enc = g.mse(student.enc_hidden, te);
        let mse_dec = g.mse(student.dec_hidden, td);
        let both = g.add(mse_enc, mse_dec);
        let h_term = g.scale(both, 0.5 * kd.lambda_h);
        loss = g.add(loss, h_term);
    }

    loss
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf_output(g: &mut Graph, logits: Tensor, enc: Tensor, dec: Tensor) -> ForwardOutput {
        ForwardOutput {
            logits: g.leaf(logits),
            enc_hidden: g.leaf(enc),
            dec_hidden: g.leaf(dec),
        }
    }

    fn hand_ce(logits: &Tensor, targets: &[usize]) -> f64 {
        let (rows, cols) = (logits.rows(), logits.cols());
        let mut total = 0.0;
        for r in 0..rows {
            let row = &logits.data()[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[targets[r]];
        }
        total / rows as f64
    }

    #[test]
    fn matching_student_reduces_to_pure_cross_entropy() {
        let logits = Tensor::new(&[2, 3], vec![2.0, 0.5, -1.0, -0.3, 1.2, 0.8]);
        let hidden = Tensor::new(&[2, 4], vec![0.1; 8]);
        let teacher = TeacherOutputs {
            logits: logits.clone(),
            enc_hidden: hidden.clone(),
            dec_hidden: hidden.clone(),
        };
        let targets = [0, 1]; // the argmax rows of the logits
        let mut g = Graph::new();
        let student = leaf_output(&mut g, logits.clone(), hidden.clone(), hidden.clone());
        let loss = distill_loss(&mut g, &student, &teacher, &targets, &KdConfig::default());
        let expected = hand_ce(&logits, &targets);
        assert!(
            (g.value(loss).item() - expected).abs() < 1e-12,
            "KL and MSE terms must vanish when student equals teacher: {} vs {expected}",
            g.value(loss).item()
        );
    }

    #[test]
    fn zero_weights_give_pure_cross_entropy() {
        let s_logits = Tensor::new(&[2, 3], vec![0.4, -0.2, 1.1, 0.0, 2.0, -0.5]);
        let t_logits = Tensor::new(&[2, 3], vec![5.0, 0.0, 0.0, 0.0, 5.0, 0.0]);
        let h_s = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let h_t = Tensor::new(&[2, 2], vec![0.0; 4]);
        let teacher = TeacherOutputs {
            logits: t_logits,
            enc_hidden: h_t.clone(),
            dec_hidden: h_t,
        };
        let kd = KdConfig {
            lambda_kd: 0.0,
            lambda_h: 0.0,
            temperature: 2.0,
        };
        let targets = [2, 0];
        let mut g = Graph::new();
        let student = leaf_output(&mut g, s_logits.clone(), h_s.clone(), h_s);
        let loss = distill_loss(&mut g, &student, &teacher, &targets, &kd);
        assert!((g.value(loss).item() - hand_ce(&s_logits, &targets)).abs() < 1e-12);
    }

    #[test]
    fn kl_term_matches_a_hand_computed_three_class_value() {
        let t = 2.0;
        let t_logits = Tensor::new(&[1, 3], vec![1.0, 0.0, -1.0]);
        let s_logits = Tensor::new(&[1, 3], vec![0.2, 0.4, -0.6]);
        let h = Tensor::new(&[1, 2], vec![0.0, 0.0]);
        let teacher = TeacherOutputs {
            logits: t_logits.clone(),
            enc_hidden: h.clone(),
            dec_hidden: h.clone(),
        };
        let kd = KdConfig {
            lambda_kd: 1.0,
            lambda_h: 0.0,
            temperature: t,
        };
        let targets = [1];
        let mut g = Graph::new();
        let student = leaf_output(&mut g, s_logits.clone(), h.clone(), h);
        let loss = distill_loss(&mut g, &student, &teacher, &targets, &kd);

        let softmax = |v: &[f64]| {
            let sum: f64 = v.iter().map(|x| (x / t).exp()).sum();
            v.iter().map(|x| (x / t).exp() / sum).collect::<Vec<f64>>()
        };
        let p = softmax(t_logits.data());
        let q = softmax(s_logits.data());
        let kl: f64 = p
            .iter()
            .zip(&q)
            .map(|(pi, qi)| pi * (pi / qi).ln())
            .sum();
        let expected = hand_ce(&s_logits, &targets) + t * t * kl;
        assert!(
            (g.value(loss).item() - expected).abs() < 1e-12,
            "{} vs {expected}",
            g.value(loss).item()
        );
    }

    #[test]
    fn hidden_term_averages_encoder_and_decoder_mse() {
        let logits = Tensor::new(&[1, 2], vec![0.0, 0.0]);
        let teacher = TeacherOutputs {
            logits: logits.clone(),
            enc_hidden: Tensor::new(&[1, 2], vec![0.0, 0.0]),
            dec_hidden: Tensor::new(&[1, 2], vec![0.0, 0.0]),
        };
        let kd = KdConfig {
            lambda_kd: 0.0,
            lambda_h: 2.0,
            temperature: 1.0,
        };
        let mut g = Graph::new();
        let student = leaf_output(
            &mut g,
            logits.clone(),
            Tensor::new(&[1, 2], vec![2.0, 0.0]), // MSE 2
            Tensor::new(&[1, 2], vec![1.0, 1.0]), // MSE 1
        );
        let loss = distill_loss(&mut g, &student, &teacher, &[0], &kd);
        let expected = hand_ce(&logits, &[0]) + 2.0 * 0.5 * (2.0 + 1.0);
        assert!((g.value(loss).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn kl_gradient_pushes_student_toward_teacher() {
        // One position, CE suppressed by matching target; gradient on the
        // student logits should point from student toward teacher mass.
        let t_logits = Tensor::new(&[1, 2], vec![3.0, 0.0]);
        let s_logits = Tensor::new(&[1, 2], vec![0.0, 3.0]);
        let h = Tensor::new(&[1, 1], vec![0.0]);
        let teacher = TeacherOutputs {
            logits: t_logits,
            enc_hidden: h.clone(),
            dec_hidden: h.clone(),
        };
        let kd = KdConfig {
            lambda_kd: 1.0,
            lambda_h: 0.0,
            temperature: 1.0,
        };
        let mut g = Graph::new();
        let student = leaf_output(&mut g, s_logits, h.clone(), h);
        let loss = distill_loss(&mut g, &student, &teacher, &[0], &kd);
        let grads = g.backward(loss);
        let gl = grads.get(student.logits).unwrap();
        assert!(
            gl.data()[0] < 0.0 && gl.data()[1] > 0.0,
            "gradient should raise class 0 and lower class 1: {:?}",
            gl.data()
        );
    }
}
