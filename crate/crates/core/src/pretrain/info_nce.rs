use super::queue::KeyQueue;
use crate::error::{Error, Result};
use crate::nn::tensor::{dot, log_sum_exp};
use crate::nn::Matrix;

#[derive(Clone, Debug)]
pub struct InfoNce {
    pub mean_loss: f64,
    pub per_sample: Vec<f64>,
    /// Gradient of `mean_loss` with respect to `q`; keys and queue are
    /// treated as constants.
    pub grad_q: Matrix,
}

/// Contrastive loss of each query against its positive key and the queued
/// negatives:
/// `−log( exp(q·k⁺/τ) / (exp(q·k⁺/τ) + Σ_j exp(q·k_j/τ)) )`.
pub fn info_nce_loss(q: &Matrix, k_pos: &Matrix, queue: &KeyQueue, tau: f64) -> Result<InfoNce> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    if queue.filled() == 0 {
        return Err(Error::invalid("key queue is empty"));
    }
    if q.rows != k_pos.rows || q.cols != k_pos.cols || q.cols != queue.dim() {
        return Err(Error::shape(format!(
            "q is {}×{}, k is {}×{}, queue dim {}",
            q.rows,
            q.cols,
            k_pos.rows,
            k_pos.cols,
            queue.dim()
        )));
    }
    if q.rows == 0 {
        return Err(Error::shape("empty batch"));
    }
    let d = q.cols;
    let negatives = queue.keys();
    let b = q.rows as f64;
    let mut per_sample = Vec::with_capacity(q.rows);
    let mut grad_q = Matrix::zeros(q.rows, d);
    let mut logits = Vec::with_capacity(queue.filled() + 1);
    for i in 0..q.rows {
        let qi = q.row(i);
        let kp = k_pos.row(i);
        logits.clear();
        logits.push(dot(qi, kp) / tau);
        logits.extend(negatives.chunks_exact(d).map(|kj| dot(qi, kj) / tau));
        let lse = log_sum_exp(&logits);
        per_sample.push(lse - logits[0]);

        let g = grad_q.row_mut(i);
        let p0 = (logits[0] - lse).exp();
        for (gv, &kv) in g.iter_mut().zip(kp) {
            *gv = (p0 - 1.0) * kv;
        }
        for (kj, &z) in negatives.chunks_exact(d).zip(&logits[1..]) {
            let pj = (z - lse).exp();
            for (gv, &kv) in g.iter_mut().zip(kj) {
                *gv += pj * kv;
            }
        }
        for gv in g.iter_mut() {
            *gv /= tau * b;
        }
    }
    let mean_loss = per_sample.iter().sum::<f64>() / b;
    Ok(InfoNce {
        mean_loss,
        per_sample,
        grad_q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn queue_of(rows: &[[f64; 3]]) -> KeyQueue {
        let mut q = KeyQueue::empty(rows.len(), 3).unwrap();
        q.push(&Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()))
            .unwrap();
        q
    }

    #[test]
    fn aligned_positive_two_orthogonal_negatives() {
        let q = Matrix::from_rows(&[vec![1.0, 0.0, 0.0]]);
        let queue = queue_of(&[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let out = info_nce_loss(&q, &q, &queue, 1.0).unwrap();
        let e = std::f64::consts::E;
        let expected = -(e / (e + 2.0)).ln();
        assert!((out.mean_loss - expected).abs() < 1e-12);
        assert!((out.mean_loss - 0.5514).abs() < 1e-4);
    }

    #[test]
    fn all_orthogonal_gives_uniform_softmax() {
        let q = Matrix::from_rows(&[vec![1.0, 0.0, 0.0]]);
        let k = Matrix::from_rows(&[vec![0.0, 1.0, 0.0]]);
        let queue = queue_of(&[[0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]);
        let out = info_nce_loss(&q, &k, &queue, 1.0).unwrap();
        assert!((out.mean_loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let q = Matrix::from_rows(&[vec![1.0, 0.0, 0.0]]);
        let queue = queue_of(&[[0.0, 1.0, 0.0]]);
        assert!(info_nce_loss(&q, &q, &queue, 0.0).is_err());
        let empty = KeyQueue::empty(4, 3).unwrap();
        assert!(info_nce_loss(&q, &q, &empty, 0.07).is_err());
    }

    #[test]
    fn loss_is_positive_even_when_saturated() {
        let q = Matrix::from_rows(&[vec![1.0, 0.0, 0.0]]);
        let queue = queue_of(&[[-1.0, 0.0, 0.0]]);
        let out = info_nce_loss(&q, &q, &queue, 0.07).unwrap();
        assert!(out.mean_loss > 0.0);
    }
}
