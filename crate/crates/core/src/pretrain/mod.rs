//! Contrastive pretraining on the unlabeled base dataset with a momentum key
//! encoder and a queue of negative keys.

pub mod info_nce;
pub mod queue;

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use info_nce::{info_nce_loss, InfoNce};
pub use queue::KeyQueue;

use crate::data::augment::augment_twice;
use crate::data::{AugmentConfig, Dataset, Image};
use crate::error::{Error, Result};
use crate::nn::{
    build_encoder, images_to_tensor, momentum_update_in_place, Encoder, EncoderCheckpoint,
    EncoderConfig, EncoderParams, Mode, Sgd,
};
use crate::rng::{self, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fractions of `epochs` at which the learning rate is multiplied by
    /// `lr_decay_factor`.
    pub lr_decay_points: Vec<f64>,
    pub lr_decay_factor: f64,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub temperature: f64,
    pub queue_size: usize,
    pub encoder_momentum: f64,
    pub seed: u64,
}

impl PretrainConfig {
    /// Full-scale settings: 200 epochs, batch 16, lr 0.03 decayed ×0.1 at
    /// epochs 120 and 160, SGD momentum 0.9, weight decay 1e-4, τ = 0.07,
    /// 1280 queued negatives.
    pub fn paper() -> Self {
        Self {
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

    /// Laptop-scale settings for 32×32 synthetic data.
    pub fn desk() -> Self {
        Self {
            epochs: 30,
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
        if self.queue_size == 0 {
            return Err(Error::invalid("queue_size must be positive"));
        }
        if self.batch_size > self.queue_size {
            return Err(Error::invalid("batch_size cannot exceed queue_size"));
        }
        Ok(())
    }
}

pub(crate) fn validate_optim(
    epochs: usize,
    batch_size: usize,
    lr: f64,
    decay_points: &[f64],
    tau: f64,
    m: f64,
) -> Result<()> {
    if epochs == 0 {
        return Err(Error::invalid("epochs must be positive"));
    }
    if batch_size < 2 {
        return Err(Error::invalid("batch_size must be at least 2 (batch statistics)"));
    }
    if !(lr > 0.0) {
        return Err(Error::invalid("lr must be positive"));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    if !(0.0..1.0).contains(&m) {
        return Err(Error::invalid("encoder momentum must lie in [0, 1)"));
    }
    let mut prev = 0.0;
    for &p in decay_points {
        if !(p > prev && p < 1.0) {
            return Err(Error::invalid("lr decay points must be strictly increasing in (0, 1)"));
        }
        prev = p;
    }
    Ok(())
}

/// Piecewise-constant learning rate: the base rate times one decay factor
/// per decay point already reached.
pub fn step_lr(epoch: usize, epochs: usize, lr: f64, points: &[f64], factor: f64) -> f64 {
    let reached = points
        .iter()
        .filter(|&&p| epoch as f64 >= p * epochs as f64 - 1e-9)
        .count();
    lr * factor.powi(reached as i32)
}

pub fn lr_schedule(epoch: usize, config: &PretrainConfig) -> f64 {
    step_lr(epoch, config.epochs, config.lr, &config.lr_decay_points, config.lr_decay_factor)
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainState {
    pub query: EncoderParams,
    pub key: EncoderParams,
    pub queue: KeyQueue,
    pub optimizer: Sgd,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
}

impl PretrainState {
    pub fn new(enc_config: &EncoderConfig, config: &PretrainConfig) -> Result<Self> {
        config.validate()?;
        let query = build_encoder(enc_config, config.seed)?;
        Ok(Self {
            key: query.clone(),
            query,
            queue: KeyQueue::random(config.queue_size, enc_config.embed_dim, config.seed)?,
            optimizer: Sgd::new(config.sgd_momentum, config.weight_decay),
            epoch: 0,
            step: 0,
        })
    }

    pub fn checkpoint(&self) -> EncoderCheckpoint {
        EncoderCheckpoint::new(self.query.clone(), self.epoch, self.step)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub wall_time: f64,
}

/// Shuffled mini-batches of sample indices. A trailing batch with fewer
/// than two samples is dropped.
pub(crate) fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng_at(seed, &[stream::SHUFFLE, epoch as u64]));
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Two augmented views for every index, seeded per (epoch, sample).
pub(crate) fn augmented_views(
    images: &[Arc<Image>],
    batch: &[usize],
    augment: &AugmentConfig,
    seed: u64,
    epoch: usize,
) -> (Vec<Arc<Image>>, Vec<Arc<Image>>) {
    #[cfg(feature = "parallel")]
    let pairs: Vec<(Image, Image)> = {
        use rayon::prelude::*;
        batch
            .par_iter()
            .map(|&i| {
                let s = rng::derive(seed, &[stream::AUGMENT, epoch as u64, i as u64]);
                augment_twice(&images[i], augment, s)
            })
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let pairs: Vec<(Image, Image)> = batch
        .iter()
        .map(|&i| {
            let s = rng::derive(seed, &[stream::AUGMENT, epoch as u64, i as u64]);
            augment_twice(&images[i], augment, s)
        })
        .collect();
    pairs.into_iter().map(|(q, k)| (Arc::new(q), Arc::new(k))).unzip()
}

/// One contrastive step: loss, SGD on the query encoder, momentum update of
/// the key encoder, then the batch keys enter the queue. Returns the mean
/// loss.
pub fn train_step(
    state: &mut PretrainState,
    encoder: &Encoder,
    views_q: &[Arc<Image>],
    views_k: &[Arc<Image>],
    config: &PretrainConfig,
    lr: f64,
) -> Result<f64> {
    let size = encoder.config().input_size;
    let (q, q_pass) = encoder.forward(&state.query, images_to_tensor(views_q, size)?, Mode::Train)?;
    let (k, k_pass) = encoder.forward(&state.key, images_to_tensor(views_k, size)?, Mode::Train)?;
    let loss = info_nce_loss(&q, &k, &state.queue, config.temperature)?;
    if !loss.mean_loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: state.epoch,
            step: state.step as usize,
            lr,
            loss: loss.mean_loss,
        });
    }
    let grads = encoder.backward(&state.query, &q_pass, &loss.grad_q)?;
    state.optimizer.step(lr, &mut state.query, &grads, Vec::new());
    encoder.update_running_stats(&mut state.query, &q_pass);
    encoder.update_running_stats(&mut state.key, &k_pass);
    momentum_update_in_place(&mut state.key, &state.query, config.encoder_momentum)?;
    state.queue.push(&k)?;
    state.step += 1;
    Ok(loss.mean_loss)
}

/// Runs one epoch over the base images.
pub fn train_epoch(
    state: &mut PretrainState,
    encoder: &Encoder,
    images: &[Arc<Image>],
    config: &PretrainConfig,
    augment: &AugmentConfig,
) -> Result<EpochLog> {
    let start = Instant::now();
    let epoch = state.epoch;
    let lr = lr_schedule(epoch, config);
    let mut total = 0.0;
    let mut count = 0usize;
    for batch in epoch_batches(images.len(), config.batch_size, config.seed, epoch) {
        let (vq, vk) = augmented_views(images, &batch, augment, config.seed, epoch);
        total += train_step(state, encoder, &vq, &vk, config, lr)?;
        count += 1;
    }
    state.epoch += 1;
    Ok(EpochLog {
        epoch,
        mean_loss: if count > 0 { total / count as f64 } else { f64::NAN },
        lr,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

fn check_inputs(base: &Dataset, enc_config: &EncoderConfig, augment: &AugmentConfig) -> Result<()> {
    if base.len() < 2 {
        return Err(Error::invalid("base dataset needs at least two images"));
    }
    augment.validate()?;
    if augment.output_size != enc_config.input_size {
        return Err(Error::invalid(format!(
            "augmentation output size {} differs from encoder input size {}",
            augment.output_size, enc_config.input_size
        )));
    }
    Ok(())
}

/// Continues training `state` until `config.epochs` epochs are complete,
/// calling `on_epoch` after each one.
pub fn pretrain_from(
    state: &mut PretrainState,
    base: &Dataset,
    config: &PretrainConfig,
    augment: &AugmentConfig,
    mut on_epoch: impl FnMut(&EpochLog, &PretrainState) -> Result<()>,
) -> Result<Vec<EpochLog>> {
    config.validate()?;
    let enc_config = state.query.config;
    check_inputs(base, &enc_config, augment)?;
    let encoder = Encoder::new(&enc_config)?;
    // Labels of the base dataset are never consulted.
    let images = base.images();
    let mut logs = Vec::new();
    while state.epoch < config.epochs {
        let log = train_epoch(state, &encoder, &images, config, augment)?;
        if !log.mean_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: log.epoch,
                step: state.step as usize,
                lr: log.lr,
                loss: log.mean_loss,
            });
        }
        on_epoch(&log, state)?;
        logs.push(log);
    }
    Ok(logs)
}

/// Trains a query encoder from scratch and returns its checkpoint with the
/// per-epoch log.
pub fn pretrain(
    base: &Dataset,
    enc_config: &EncoderConfig,
    config: &PretrainConfig,
    augment: &AugmentConfig,
) -> Result<(EncoderCheckpoint, Vec<EpochLog>)> {
    let mut state = PretrainState::new(enc_config, config)?;
    let logs = pretrain_from(&mut state, base, config, augment, |_, _| Ok(()))?;
    Ok((state.checkpoint(), logs))
}
