//! Self-distillation cross-entropy between a centred, sharpened teacher
//! distribution and the student distribution.

use crate::nn::{log_softmax, softmax};

/// Teacher target `p = softmax((t − c) / τ_t)`.
pub fn teacher_probs(embed_t: &[f64], center: &[f64], teacher_temp: f64) -> Vec<f64> {
    let centred: Vec<f64> = embed_t.iter().zip(center).map(|(t, c)| t - c).collect();
    softmax(&centred, teacher_temp)
}

/// `−Σ p_i log q_i` for a precomputed teacher target `p`.
pub fn cross_entropy(p: &[f64], embed_s: &[f64], student_temp: f64) -> f64 {
    let log_q = log_softmax(embed_s, student_temp);
    -p.iter().zip(&log_q).map(|(p, lq)| p * lq).sum::<f64>()
}

pub fn ssl_loss(
    embed_t: &[f64],
    embed_s: &[f64],
    center: &[f64],
    teacher_temp: f64,
    student_temp: f64,
) -> f64 {
    cross_entropy(&teacher_probs(embed_t, center, teacher_temp), embed_s, student_temp)
}

/// Loss and its gradient with respect to `embed_s`, `(q − p) / τ_s`. The
/// teacher side is a constant target.
pub fn cross_entropy_grad(p: &[f64], embed_s: &[f64], student_temp: f64) -> (f64, Vec<f64>) {
    let log_q = log_softmax(embed_s, student_temp);
    let loss = -p.iter().zip(&log_q).map(|(p, lq)| p * lq).sum::<f64>();
    let grad = log_q
        .iter()
        .zip(p)
        .map(|(lq, p)| (lq.exp() - p) / student_temp)
        .collect();
    (loss, grad)
}

/// `c' = λ·c + (1 − λ)·mean(batch)`.
pub fn update_center(center: &[f64], teacher_batch: &[Vec<f64>], momentum: f64) -> Vec<f64> {
    assert!(!teacher_batch.is_empty(), "center update needs a non-empty batch");
    let n = teacher_batch.len() as f64;
    center
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mean = teacher_batch.iter().map(|t| t[i]).sum::<f64>() / n;
            momentum * c + (1.0 - momentum) * mean
        })
        .collect()
}
