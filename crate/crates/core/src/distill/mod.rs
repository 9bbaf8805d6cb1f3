//! Self-distillation: a randomly initialized student with the teacher's
//! architecture learns from teacher pseudo labels on the unlabeled base
//! set, optionally alongside the contrastive objective.

pub mod labels;
pub mod losses;

use std::sync::Arc;
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use labels::{adapt_labels, alpha_schedule, make_pseudo_labels, LabelDesign, PseudoLabel};
pub use losses::{
    classification_loss, classification_loss_logits, hybrid_loss, regression_grad, regression_loss,
    LossVariant, PROB_EPS,
};

use crate::baseline::{extract_features, fit_on_support, LogRegConfig, TeacherModel};
use crate::data::{AugmentConfig, Dataset, Image, TaskSample};
use crate::error::{Error, Result};
use crate::nn::{
    build_encoder, images_to_tensor, momentum_update_in_place, softmax, Encoder, EncoderParams,
    Gradients, Matrix, Mode, Sgd,
};
use crate::pretrain::{augmented_views, epoch_batches, info_nce_loss, step_lr, validate_optim, KeyQueue};
use crate::rng::{self, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    pub label_design: LabelDesign,
    /// Confidence in the student's own prediction at the last epoch.
    pub alpha_final: f64,
    pub loss_variant: LossVariant,
    /// Multiplier on the second loss term. Kept at 1.0 for the unweighted sum.
    pub cls_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay_points: Vec<f64>,
    pub lr_decay_factor: f64,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub temperature: f64,
    pub queue_size: usize,
    pub encoder_momentum: f64,
    pub seed: u64,
}

impl DistillConfig {
    pub fn paper() -> Self {
        Self {
            label_design: LabelDesign::AdaptiveHard,
            alpha_final: 0.7,
            loss_variant: LossVariant::ConPlusCls,
            cls_weight: 1.0,
            epochs: 200,
            batch_size: 16,
            lr: 0.03,
            lr_decay_points: vec![0.6, 0.8],
            lr_decay_factor: 0.1,
            sgd_momentum: 0.9,
            weight_decay: 1e-4,
            temperature: 0.07,
            queue_size: 1280,
            encoder_momentum: 0.999,
            seed: 0,
        }
    }

    pub fn desk() -> Self {
        Self {
            epochs: 20,
            queue_size: 64,
            encoder_momentum: 0.99,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_optim(
            self.epochs,
            self.batch_size,
            self.lr,
            &self.lr_decay_points,
            self.temperature,
            self.encoder_momentum,
        )?;
        if !(0.0..=1.0).contains(&self.alpha_final) {
            return Err(Error::invalid("alpha_final must lie in [0, 1]"));
        }
        if !(self.cls_weight >= 0.0 && self.cls_weight.is_finite()) {
            return Err(Error::invalid("cls_weight must be finite and non-negative"));
        }
        if self.queue_size == 0 || self.batch_size > self.queue_size {
            return Err(Error::invalid("queue_size must be positive and at least batch_size"));
        }
        Ok(())
    }

    /// α used for the targets during the 0-based `epoch`.
    pub fn alpha_at(&self, epoch: usize) -> f64 {
        if self.label_design.is_adaptive() {
            alpha_schedule(epoch + 1, self.epochs, self.alpha_final)
        } else {
            0.0
        }
    }
}

/// Linear classifier followed by softmax.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Head {
    /// `n_classes × dim`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Head {
    /// Uniform(−1/√d, 1/√d) initialization for weights and bias.
    pub fn init(n_classes: usize, dim: usize, seed: u64) -> Self {
        let mut rng = rng::rng(seed);
        let bound = 1.0 / (dim as f64).sqrt();
        let weights = (0..n_classes * dim).map(|_| rng.random_range(-bound..bound)).collect();
        let bias = (0..n_classes).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            weights: Matrix::from_vec(n_classes, dim, weights),
            bias,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.weights.rows
    }

    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols != self.weights.cols {
            return Err(Error::shape(format!(
                "head expects {} features, got {}",
                self.weights.cols, features.cols
            )));
        }
        let mut out = Matrix::zeros(features.rows, self.n_classes());
        for i in 0..features.rows {
            let x = features.row(i);
            for (k, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = self.bias[k] + self.weights.row(k).iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            }
        }
        Ok(out)
    }

    pub fn predict_proba(&self, features: &Matrix) -> Result<Matrix> {
        let logits = self.logits(features)?;
        let rows: Vec<Vec<f64>> = logits.iter_rows().map(softmax).collect();
        Ok(Matrix::from_rows(&rows))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentProvenance {
    pub teacher_encoder_hash: String,
    pub label_design: LabelDesign,
    pub alpha_final: f64,
    pub loss_variant: LossVariant,
    pub epochs: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentModel {
    pub query: EncoderParams,
    pub key: EncoderParams,
    pub head: Head,
    pub class_map: Vec<usize>,
    pub provenance: StudentProvenance,
}

pub const STUDENT_FORMAT: &str = "rarefsl-student";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentCheckpoint {
    pub format: String,
    pub student: StudentModel,
}

impl StudentCheckpoint {
    pub fn new(student: StudentModel) -> Self {
        Self {
            format: STUDENT_FORMAT.into(),
            student,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(s)?;
        if ck.format != STUDENT_FORMAT {
            return Err(Error::Checkpoint(format!("unexpected student format `{}`", ck.format)));
        }
        let st = &ck.student;
        st.query.config.validate()?;
        if !st.query.same_shapes(&st.key) {
            return Err(Error::Checkpoint("query and key encoders differ in shape".into()));
        }
        if st.head.weights.cols != st.query.config.embed_dim || st.head.bias.len() != st.head.n_classes() {
            return Err(Error::Checkpoint("head shape does not match the encoder".into()));
        }
        Ok(ck)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Usage {
    Direct,
    LrRefit,
}

impl Usage {
    pub fn name(self) -> &'static str {
        match self {
            Self::Direct => "direct",
            Self::LrRefit => "lr_refit",
        }
    }
}

/// Class probabilities for `images`. `Direct` uses the trained head and
/// ignores `support`; `LrRefit` fits logistic regression on the student's
/// support features instead.
pub fn student_predict(
    student: &StudentModel,
    images: &[Arc<Image>],
    usage: Usage,
    support: Option<&[TaskSample]>,
    logreg: &LogRegConfig,
) -> Result<Matrix> {
    let features = extract_features(&student.query, images)?;
    match usage {
        Usage::Direct => student.head.predict_proba(&features),
        Usage::LrRefit => {
            let support = support.ok_or_else(|| Error::invalid("lr_refit needs a support set"))?;
            let clf = fit_on_support(&student.query, support, student.head.n_classes(), logreg)?;
            clf.predict_proba(&features)
        }
    }
}

/// Per-sample training targets: teacher labels, blended with the student's
/// detached predictions when `alpha > 0`.
pub fn training_targets(teacher: &[PseudoLabel], student_probs: &Matrix, alpha: f64) -> Result<Vec<Vec<f64>>> {
    teacher
        .iter()
        .zip(student_probs.iter_rows())
        .map(|(y, p)| Ok(adapt_labels(y, p, alpha)?.vector))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillEpochLog {
    pub epoch: usize,
    pub con_loss: Option<f64>,
    pub cls_loss: Option<f64>,
    pub reg_loss: Option<f64>,
    pub total_loss: f64,
    pub alpha: f64,
    pub lr: f64,
    pub wall_time: f64,
}

/// Frozen-teacher outputs on the clean base images, computed once.
struct TeacherCache {
    labels: Vec<PseudoLabel>,
    embeddings: Matrix,
}

#[derive(Default)]
struct StepLosses {
    con: f64,
    cls: f64,
    reg: f64,
    total: f64,
}

struct Trainer<'a> {
    encoder: Encoder,
    config: &'a DistillConfig,
    augment: &'a AugmentConfig,
    images: Vec<Arc<Image>>,
    cache: TeacherCache,
    stream_seed: u64,
}

struct State {
    query: EncoderParams,
    key: EncoderParams,
    head: Head,
    queue: KeyQueue,
    optimizer: Sgd,
    step: u64,
}

impl Trainer<'_> {
    fn non_finite(&self, epoch: usize, step: u64, lr: f64, loss: f64) -> Error {
        Error::NonFiniteLoss {
            epoch,
            step: step as usize,
            lr,
            loss,
        }
    }

    fn step(&self, st: &mut State, batch: &[usize], epoch: usize, lr: f64, alpha: f64) -> Result<StepLosses> {
        let variant = self.config.loss_variant;
        let size = self.encoder.config().input_size;
        let b = batch.len() as f64;
        let mut grads = Gradients::zeros_like(&st.query);
        let mut head_gw = vec![0.0; st.head.weights.data.len()];
        let mut head_gb = vec![0.0; st.head.bias.len()];
        let mut out = StepLosses::default();
        let mut passes = Vec::new();

        if variant.uses_classification() || variant == LossVariant::ConPlusReg {
            let clean: Vec<Arc<Image>> = batch.iter().map(|&i| Arc::clone(&self.images[i])).collect();
            let (z, pass) = self.encoder.forward(&st.query, images_to_tensor(&clean, size)?, Mode::Train)?;
            let mut grad_z = Matrix::zeros(z.rows, z.cols);
            if variant.uses_classification() {
                let logits = st.head.logits(&z)?;
                let probs = Matrix::from_rows(&logits.iter_rows().map(softmax).collect::<Vec<_>>());
                let teacher: Vec<PseudoLabel> = batch.iter().map(|&i| self.cache.labels[i].clone()).collect();
                let targets = training_targets(&teacher, &probs, alpha)?;
                let w = self.config.cls_weight;
                for (r, target) in targets.iter().enumerate() {
                    let (loss, g) = classification_loss_logits(target, logits.row(r), self.config.label_design)?;
                    out.cls += loss / b;
                    let zr = z.row(r);
                    for (k, &gk) in g.iter().enumerate() {
                        let gk = w * gk / b;
                        head_gb[k] += gk;
                        for (j, (&zj, &wkj)) in zr.iter().zip(st.head.weights.row(k)).enumerate() {
                            head_gw[k * z.cols + j] += gk * zj;
                            grad_z.row_mut(r)[j] += gk * wkj;
                        }
                    }
                }
            } else {
                let w = self.config.cls_weight;
                for (r, &i) in batch.iter().enumerate() {
                    let t = self.cache.embeddings.row(i);
                    out.reg += regression_loss(t, z.row(r))? / b;
                    for (g, d) in grad_z.row_mut(r).iter_mut().zip(regression_grad(t, z.row(r))) {
                        *g += w * d / b;
                    }
                }
            }
            grads.add_assign(&self.encoder.backward(&st.query, &pass, &grad_z)?);
            passes.push(pass);
        }

        let mut keys = None;
        if variant.uses_contrastive() {
            let (vq, vk) = augmented_views(&self.images, batch, self.augment, self.stream_seed, epoch);
            let (q, q_pass) = self.encoder.forward(&st.query, images_to_tensor(&vq, size)?, Mode::Train)?;
            let (k, k_pass) = self.encoder.forward(&st.key, images_to_tensor(&vk, size)?, Mode::Train)?;
            let con = info_nce_loss(&q, &k, &st.queue, self.config.temperature)?;
            out.con = con.mean_loss;
            grads.add_assign(&self.encoder.backward(&st.query, &q_pass, &con.grad_q)?);
            passes.push(q_pass);
            keys = Some((k, k_pass));
        }

        let second = self.config.cls_weight * if variant.uses_classification() { out.cls } else { out.reg };
        out.total = hybrid_loss(variant, out.con, second)
            .map_err(|_| self.non_finite(epoch, st.step, lr, out.con + second))?;

        let head_slots: Vec<(&mut [f64], &[f64])> = if variant.uses_classification() {
            vec![
                (st.head.weights.data.as_mut_slice(), head_gw.as_slice()),
                (st.head.bias.as_mut_slice(), head_gb.as_slice()),
            ]
        } else {
            Vec::new()
        };
        st.optimizer.step(lr, &mut st.query, &grads, head_slots);
        for pass in &passes {
            self.encoder.update_running_stats(&mut st.query, pass);
        }
        if let Some((_, k_pass)) = &keys {
            self.encoder.update_running_stats(&mut st.key, k_pass);
        }
        momentum_update_in_place(&mut st.key, &st.query, self.config.encoder_momentum)?;
        if let Some((k, _)) = &keys {
            st.queue.push(k)?;
        }
        st.step += 1;
        Ok(out)
    }
}

fn mean_of(values: &[StepLosses], f: impl Fn(&StepLosses) -> f64) -> f64 {
    values.iter().map(f).sum::<f64>() / values.len().max(1) as f64
}

/// Trains a student on `base` under the frozen `teacher`, calling
/// `on_epoch` after every epoch.
pub fn distill_with(
    base: &Dataset,
    teacher: &TeacherModel,
    config: &DistillConfig,
    augment: &AugmentConfig,
    mut on_epoch: impl FnMut(&DistillEpochLog) -> Result<()>,
) -> Result<(StudentModel, Vec<DistillEpochLog>)> {
    config.validate()?;
    augment.validate()?;
    let enc_config = teacher.encoder.config;
    if augment.output_size != enc_config.input_size {
        return Err(Error::invalid(format!(
            "augmentation output size {} differs from encoder input size {}",
            augment.output_size, enc_config.input_size
        )));
    }
    if base.len() < 2 {
        return Err(Error::invalid("base dataset needs at least two images"));
    }
    let images = base.images();
    let embeddings = extract_features(&teacher.encoder, &images)?;
    let probs = teacher.classifier.predict_proba(&embeddings)?;
    let cache = TeacherCache {
        labels: make_pseudo_labels(&probs, config.label_design)?,
        embeddings,
    };

    let seed = rng::derive(config.seed, &[stream::STUDENT]);
    let query = build_encoder(&enc_config, rng::derive(seed, &[0]))?;
    let n_way = teacher.n_way();
    let mut st = State {
        key: query.clone(),
        query,
        head: Head::init(n_way, enc_config.embed_dim, rng::derive(seed, &[1])),
        queue: KeyQueue::random(config.queue_size, enc_config.embed_dim, rng::derive(seed, &[2]))?,
        optimizer: Sgd::new(config.sgd_momentum, config.weight_decay),
        step: 0,
    };
    let trainer = Trainer {
        encoder: Encoder::new(&enc_config)?,
        config,
        augment,
        images,
        cache,
        stream_seed: seed,
    };

    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let lr = step_lr(epoch, config.epochs, config.lr, &config.lr_decay_points, config.lr_decay_factor);
        let alpha = config.alpha_at(epoch);
        let mut steps = Vec::new();
        for batch in epoch_batches(trainer.images.len(), config.batch_size, seed, epoch) {
            steps.push(trainer.step(&mut st, &batch, epoch, lr, alpha)?);
        }
        let variant = config.loss_variant;
        let log = DistillEpochLog {
            epoch,
            con_loss: variant.uses_contrastive().then(|| mean_of(&steps, |s| s.con)),
            cls_loss: variant.uses_classification().then(|| mean_of(&steps, |s| s.cls)),
            reg_loss: (variant == LossVariant::ConPlusReg).then(|| mean_of(&steps, |s| s.reg)),
            total_loss: mean_of(&steps, |s| s.total),
            alpha,
            lr,
            wall_time: start.elapsed().as_secs_f64(),
        };
        if !log.total_loss.is_finite() {
            return Err(trainer.non_finite(epoch, st.step, lr, log.total_loss));
        }
        on_epoch(&log)?;
        logs.push(log);
    }

    let student = StudentModel {
        query: st.query,
        key: st.key,
        head: st.head,
        class_map: teacher.class_map.clone(),
        provenance: StudentProvenance {
            teacher_encoder_hash: teacher.encoder.hash(),
            label_design: config.label_design,
            alpha_final: config.alpha_final,
            loss_variant: config.loss_variant,
            epochs: config.epochs,
            seed: config.seed,
        },
    };
    Ok((student, logs))
}

pub fn distill(
    base: &Dataset,
    teacher: &TeacherModel,
    config: &DistillConfig,
    augment: &AugmentConfig,
) -> Result<(StudentModel, Vec<DistillEpochLog>)> {
    distill_with(base, teacher, config, augment, |_| Ok(()))
}
