//! Independent reference implementations and random-instance generators
//! shared by the topic suites and the acceptance suite.
#![allow(dead_code)]

use std::collections::VecDeque;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use rarefsl::distill::{
    adapt_labels, alpha_schedule, classification_loss, classification_loss_logits, regression_grad,
    regression_loss, LabelDesign, PseudoLabel,
};
use rarefsl::eval::{accuracy, macro_f1};
use rarefsl::nn::{
    build_encoder, momentum_update_in_place, Backbone, Encoder, EncoderConfig, Matrix, Mode, Tensor4,
};
use rarefsl::pretrain::{info_nce_loss, KeyQueue};
use rarefsl::rng::{rng, Rng};

pub const FD_STEP: f64 = 1e-5;

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, the usual gradient-check ratio; 0 when both
/// vectors vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn unit_rows(rows: usize, dim: usize, r: &mut Rng) -> Matrix {
    let mut m = Matrix::zeros(rows, dim);
    for i in 0..rows {
        let row = m.row_mut(i);
        for v in row.iter_mut() {
            *v = StandardNormal.sample(r);
        }
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= n);
    }
    m
}

pub fn prob_vector(n: usize, r: &mut Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| r.random_range(0.01..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

// ---- contrastive loss -------------------------------------------------------

pub struct NceInstance {
    pub q: Matrix,
    pub k: Matrix,
    pub queue: KeyQueue,
    pub negatives: Matrix,
    pub tau: f64,
}

pub fn nce_instance(seed: u64) -> NceInstance {
    let mut r = rng(seed);
    let b = r.random_range(1..=8);
    let l = r.random_range(1..=64);
    let d = r.random_range(2..=16);
    let tau = r.random_range(0.05..1.0);
    let q = unit_rows(b, d, &mut r);
    let k = unit_rows(b, d, &mut r);
    let negatives = unit_rows(l, d, &mut r);
    // Partially filled queues exercise the `filled` bookkeeping.
    let capacity = l + r.random_range(0..4);
    let mut queue = KeyQueue::empty(capacity, d).unwrap();
    queue.push(&negatives).unwrap();
    NceInstance { q, k, queue, negatives, tau }
}

/// Positive-as-class-0 log loss of an (L+1)-way softmax, computed with
/// plain exponentials.
pub fn brute_force_nce(inst: &NceInstance) -> Vec<f64> {
    (0..inst.q.rows)
        .map(|i| {
            let q = inst.q.row(i);
            let sim = |k: &[f64]| (q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / inst.tau).exp();
            let pos = sim(inst.k.row(i));
            let neg: f64 = (0..inst.negatives.rows).map(|j| sim(inst.negatives.row(j))).sum();
            -(pos / (pos + neg)).ln()
        })
        .collect()
}

/// Largest absolute deviation of the library loss (per sample and mean)
/// from the brute-force oracle.
pub fn nce_oracle_error(seed: u64) -> f64 {
    let inst = nce_instance(seed);
    let got = info_nce_loss(&inst.q, &inst.k, &inst.queue, inst.tau).unwrap();
    let want = brute_force_nce(&inst);
    let mean = want.iter().sum::<f64>() / want.len() as f64;
    got.per_sample
        .iter()
        .zip(&want)
        .map(|(a, b)| (a - b).abs())
        .fold((got.mean_loss - mean).abs(), f64::max)
}

pub fn nce_grad_error(seed: u64) -> f64 {
    let inst = nce_instance(seed);
    let analytic = info_nce_loss(&inst.q, &inst.k, &inst.queue, inst.tau).unwrap().grad_q;
    let numeric = numeric_grad(&inst.q.data, |x| {
        let q = Matrix::from_vec(inst.q.rows, inst.q.cols, x.to_vec());
        info_nce_loss(&q, &inst.k, &inst.queue, inst.tau).unwrap().mean_loss
    });
    rel_err(&analytic.data, &numeric)
}

// ---- pseudo-label losses ----------------------------------------------------

/// Gradient check of the classification loss with respect to logits for a
/// random target of the given design.
pub fn cls_grad_error(seed: u64, design: LabelDesign) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(2..=6);
    let logits: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
    let target = if design.is_hard() {
        let mut y = vec![0.0; n];
        y[r.random_range(0..n)] = 1.0;
        if design.is_adaptive() {
            let alpha = r.random_range(0.0..1.0);
            let y = PseudoLabel { vector: y, design };
            adapt_labels(&y, &prob_vector(n, &mut r), alpha).unwrap().vector
        } else {
            y
        }
    } else {
        prob_vector(n, &mut r)
    };
    let (_, analytic) = classification_loss_logits(&target, &logits, design).unwrap();
    let numeric = numeric_grad(&logits, |z| {
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        let p: Vec<f64> = e.iter().map(|v| v / s).collect();
        classification_loss(&target, &p, design).unwrap()
    });
    rel_err(&analytic, &numeric)
}

pub fn l1_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let d = r.random_range(2..=32);
    let t: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
    // Keep every coordinate well away from the kink at equality.
    let s: Vec<f64> = t
        .iter()
        .map(|&v| v + r.random_range(0.01..0.5) * if r.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let analytic = regression_grad(&t, &s);
    let numeric = numeric_grad(&s, |x| regression_loss(&t, x).unwrap());
    rel_err(&analytic, &numeric)
}

// ---- encoder ------------------------------------------------------------------

pub fn tiny_config(backbone: Backbone) -> EncoderConfig {
    EncoderConfig {
        backbone,
        input_size: 8,
        embed_dim: 4,
        width: if backbone == Backbone::Conv4 { 2 } else { 1 },
    }
}

/// Checks every trainable parameter of a small encoder in train mode
/// under the scalar loss `Σ c ⊙ embed(x)` with random `c`.
pub fn encoder_grad_error(seed: u64, backbone: Backbone) -> (f64, usize) {
    let config = tiny_config(backbone);
    let encoder = Encoder::new(&config).unwrap();
    let params = build_encoder(&config, seed).unwrap();
    let mut r = rng(seed ^ 0x9e37);
    let n = 3;
    let size = config.input_size;
    let input = Tensor4::from_vec(
        n,
        3,
        size,
        size,
        (0..n * 3 * size * size).map(|_| r.random_range(0.0..1.0)).collect(),
    );
    let coeff = Matrix::from_vec(
        n,
        config.embed_dim,
        (0..n * config.embed_dim).map(|_| r.random_range(-1.0..1.0)).collect(),
    );
    let loss = |p: &rarefsl::nn::EncoderParams| {
        let (z, _) = encoder.forward(p, input.clone(), Mode::Train).unwrap();
        z.data.iter().zip(&coeff.data).map(|(a, b)| a * b).sum::<f64>()
    };
    let (_, pass) = encoder.forward(&params, input.clone(), Mode::Train).unwrap();
    let grads = encoder.backward(&params, &pass, &coeff).unwrap();

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut probe = params.clone();
    for (gi, group) in params.groups.iter().enumerate() {
        if !group.trainable {
            continue;
        }
        for i in 0..group.data.len() {
            let orig = group.data[i];
            probe.groups[gi].data[i] = orig + FD_STEP;
            let up = loss(&probe);
            probe.groups[gi].data[i] = orig - FD_STEP;
            let down = loss(&probe);
            probe.groups[gi].data[i] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
            analytic.push(grads.groups[gi][i]);
        }
    }
    (rel_err(&analytic, &numeric), analytic.len())
}

// ---- label algebra ------------------------------------------------------------

/// Checks one random (y, p′, α) triple; returns a description of the first
/// violated property.
pub fn label_algebra_violation(seed: u64) -> Option<String> {
    let mut r = rng(seed);
    let n = r.random_range(2..=8);
    let design = LabelDesign::ALL[r.random_range(0..4)];
    let y = if design.is_hard() {
        let mut v = vec![0.0; n];
        v[r.random_range(0..n)] = 1.0;
        v
    } else {
        prob_vector(n, &mut r)
    };
    let p = prob_vector(n, &mut r);
    let alpha = match r.random_range(0..10) {
        0 => 0.0,
        1 => 1.0,
        _ => r.random_range(0.0..=1.0),
    };
    let label = PseudoLabel { vector: y.clone(), design };
    let out = adapt_labels(&label, &p, alpha).ok()?.vector;
    let sum: f64 = out.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Some(format!("seed {seed}: sum {sum}"));
    }
    for ((&o, &a), &b) in out.iter().zip(&y).zip(&p) {
        if o < a.min(b) - 1e-15 || o > a.max(b) + 1e-15 {
            return Some(format!("seed {seed}: {o} outside [{a}, {b}]"));
        }
    }
    // Convex-hull membership: out − y is α·(p − y).
    for ((&o, &a), &b) in out.iter().zip(&y).zip(&p) {
        if (o - a - alpha * (b - a)).abs() > 1e-12 {
            return Some(format!("seed {seed}: not on the segment"));
        }
    }
    let at0 = adapt_labels(&label, &p, 0.0).ok()?.vector;
    let at1 = adapt_labels(&label, &p, 1.0).ok()?.vector;
    if at0 != y || at1 != p {
        return Some(format!("seed {seed}: endpoints not exact"));
    }
    None
}

pub fn schedule_violation(total: usize, alpha_final: f64) -> Option<String> {
    if alpha_schedule(0, total, alpha_final) != 0.0 {
        return Some(format!("α_0 ≠ 0 for T={total}"));
    }
    if alpha_schedule(total, total, alpha_final) != alpha_final {
        return Some(format!("α_T ≠ {alpha_final} for T={total}"));
    }
    for t in 0..total {
        if alpha_schedule(t + 1, total, alpha_final) < alpha_schedule(t, total, alpha_final) {
            return Some(format!("decrease at t={t}, T={total}"));
        }
    }
    None
}

// ---- queue and momentum -----------------------------------------------------

/// Logical oldest-to-newest view of a queue, rebuilt from its raw storage.
pub fn queue_in_order(q: &KeyQueue) -> Vec<Vec<f64>> {
    let d = q.dim();
    let rows: Vec<Vec<f64>> = q.buffer().chunks_exact(d).map(<[f64]>::to_vec).collect();
    if q.filled() < q.capacity() {
        rows[..q.filled()].to_vec()
    } else {
        let c = q.cursor();
        rows[c..].iter().chain(&rows[..c]).cloned().collect()
    }
}

/// Random interleaving of queue pushes and momentum updates checked against
/// a `VecDeque` FIFO and a plain-vector convex combination after every step.
pub fn queue_momentum_run(seed: u64, steps: usize) -> Result<(), String> {
    let mut r = rng(seed);
    let d = r.random_range(1..=6);
    let capacity = r.random_range(1..=12);
    let mut queue = KeyQueue::empty(capacity, d).unwrap();
    let mut fifo: VecDeque<Vec<f64>> = VecDeque::new();

    let config = tiny_config(Backbone::Conv4);
    let mut key = build_encoder(&config, seed).unwrap();
    let mut query = build_encoder(&config, seed + 1).unwrap();
    let mut ref_key: Vec<Vec<f64>> = key.groups.iter().map(|g| g.data.clone()).collect();

    for step in 0..steps {
        if r.random_bool(0.5) {
            let b = r.random_range(1..=capacity);
            let keys = unit_rows(b, d, &mut r);
            queue.push(&keys).unwrap();
            for row in keys.iter_rows() {
                if fifo.len() == capacity {
                    fifo.pop_front();
                }
                fifo.push_back(row.to_vec());
            }
            let got = queue_in_order(&queue);
            if got != fifo.iter().cloned().collect::<Vec<_>>() || queue.filled() != fifo.len() {
                return Err(format!("queue diverged at step {step}"));
            }
        } else {
            // The query encoder moves arbitrarily between updates.
            for g in query.groups.iter_mut() {
                for v in g.data.iter_mut() {
                    *v += r.random_range(-0.1..0.1);
                }
            }
            let m = if r.random_bool(0.1) { 0.0 } else { r.random_range(0.0..1.0) };
            momentum_update_in_place(&mut key, &query, m).unwrap();
            for ((rk, g), q) in ref_key.iter_mut().zip(&key.groups).zip(&query.groups) {
                if g.trainable {
                    for (a, &b) in rk.iter_mut().zip(&q.data) {
                        *a = m * *a + (1.0 - m) * b;
                    }
                }
            }
            if key.groups.iter().zip(&ref_key).any(|(g, rk)| &g.data != rk) {
                return Err(format!("key encoder diverged at step {step}"));
            }
        }
    }
    Ok(())
}

// ---- metrics ------------------------------------------------------------------

/// Random labels scored by the library and by a count-based reference.
pub fn metric_oracle_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(2..=6);
    let len = r.random_range(1..=200);
    let truth: Vec<usize> = (0..len).map(|_| r.random_range(0..n)).collect();
    let pred: Vec<usize> = truth
        .iter()
        .map(|&t| if r.random_bool(0.6) { t } else { r.random_range(0..n) })
        .collect();
    let mut cm = vec![vec![0usize; n]; n];
    for (&t, &p) in truth.iter().zip(&pred) {
        cm[t][p] += 1;
    }
    let mut f1s = Vec::new();
    for c in 0..n {
        let tp = cm[c][c] as f64;
        let fp = (0..n).filter(|&t| t != c).map(|t| cm[t][c]).sum::<usize>() as f64;
        let fneg = (0..n).filter(|&p| p != c).map(|p| cm[c][p]).sum::<usize>() as f64;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        f1s.push(if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        });
    }
    let ref_macro = f1s.iter().sum::<f64>() / n as f64;
    let ref_acc = (0..n).map(|c| cm[c][c]).sum::<usize>() as f64 / len as f64;
    let (got_macro, got_per) = macro_f1(&pred, &truth, n).unwrap();
    let got_acc = accuracy(&pred, &truth).unwrap();
    got_per
        .iter()
        .zip(&f1s)
        .map(|(a, b)| (a - b).abs())
        .fold((got_macro - ref_macro).abs().max((got_acc - ref_acc).abs()), f64::max)
}
