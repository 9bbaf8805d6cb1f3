use super::encoder::{EncoderParams, Gradients};

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v ← μ·v + (g + λ·θ)`, `θ ← θ − lr·v`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    /// Updates each `(param, grad)` slot. Slots are matched by position
    /// across calls.
    pub fn step_slices(&mut self, lr: f64, slots: Vec<(&mut [f64], &[f64])>) {
        if self.velocity.len() != slots.len() {
            self.velocity = slots.iter().map(|(p, _)| vec![0.0; p.len()]).collect();
        }
        for ((param, grad), vel) in slots.into_iter().zip(&mut self.velocity) {
            for ((p, &g), v) in param.iter_mut().zip(grad).zip(vel.iter_mut()) {
                *v = self.momentum * *v + g + self.weight_decay * *p;
                *p -= lr * *v;
            }
        }
    }

    /// Steps the trainable groups of an encoder plus any extra slots (e.g.
    /// a classifier head) in one call.
    pub fn step(
        &mut self,
        lr: f64,
        params: &mut EncoderParams,
        grads: &Gradients,
        extra: Vec<(&mut [f64], &[f64])>,
    ) {
        let mut slots: Vec<(&mut [f64], &[f64])> = params
            .groups
            .iter_mut()
            .zip(&grads.groups)
            .filter(|(g, _)| g.trainable)
            .map(|(g, d)| (g.data.as_mut_slice(), d.as_slice()))
            .collect();
        slots.extend(extra);
        self.step_slices(lr, slots);
    }
}
