//! Image encoders producing unit-norm embeddings.

use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::{self, Cache, Layer, Mode};
use super::tensor::{Matrix, Tensor4};
use crate::data::Image;
use crate::error::{Error, Result};
use crate::rng::{self, stream};

/// Momentum of the running statistics in normalization layers.
pub const BN_MOMENTUM: f64 = 0.1;

pub const PARAMS_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    /// Four conv-norm-relu-pool blocks.
    Conv4,
    /// Four residual blocks of three 3×3 convolutions with a 1×1 projection
    /// shortcut, widths `w, 2w, 4w, 8w`.
    Resnet12Like,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub backbone: Backbone,
    pub input_size: usize,
    pub embed_dim: usize,
    pub width: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::Conv4,
            input_size: 32,
            embed_dim: 128,
            width: 16,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 2 {
            return Err(Error::UnsupportedConfig(format!(
                "embed_dim = {} (need at least 2)",
                self.embed_dim
            )));
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(4) {
            return Err(Error::UnsupportedConfig(format!(
                "input_size = {} is not a positive multiple of 4",
                self.input_size
            )));
        }
        if self.width == 0 {
            return Err(Error::UnsupportedConfig("width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub shape: Vec<usize>,
    /// Buffers (running statistics) are not trainable.
    pub trainable: bool,
    pub data: Vec<f64>,
}

/// Encoder weights together with the configuration that shapes them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub version: u32,
    pub config: EncoderConfig,
    pub groups: Vec<ParamGroup>,
}

/// Gradients aligned with [`EncoderParams::groups`]; buffer entries stay zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub groups: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug)]
enum Init {
    /// Normal with std `sqrt(2 / fan_out)`.
    Kaiming { fan_out: usize },
    Uniform { bound: f64 },
    Const(f64),
}

struct GroupSpec {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    init: Init,
}

/// Layer graph derived from an [`EncoderConfig`].
pub struct Architecture {
    layers: Vec<Layer>,
    specs: Vec<GroupSpec>,
}

struct Builder {
    specs: Vec<GroupSpec>,
}

impl Builder {
    fn group(&mut self, name: String, shape: Vec<usize>, trainable: bool, init: Init) -> usize {
        self.specs.push(GroupSpec {
            name,
            shape,
            trainable,
            init,
        });
        self.specs.len() - 1
    }

    fn conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize) -> Layer {
        let weight = self.group(
            format!("{prefix}.weight"),
            vec![cout, cin, k, k],
            true,
            Init::Kaiming { fan_out: cout * k * k },
        );
        Layer::Conv { weight, cin, cout, k }
    }

    fn bn(&mut self, prefix: &str, channels: usize) -> Layer {
        Layer::BatchNorm {
            gamma: self.group(format!("{prefix}.gamma"), vec![channels], true, Init::Const(1.0)),
            beta: self.group(format!("{prefix}.beta"), vec![channels], true, Init::Const(0.0)),
            running_mean: self.group(format!("{prefix}.running_mean"), vec![channels], false, Init::Const(0.0)),
            running_var: self.group(format!("{prefix}.running_var"), vec![channels], false, Init::Const(1.0)),
            channels,
        }
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> Layer {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Layer::Linear {
            weight: self.group(format!("{prefix}.weight"), vec![fan_out, fan_in], true, Init::Uniform { bound }),
            bias: self.group(format!("{prefix}.bias"), vec![fan_out], true, Init::Uniform { bound }),
            fan_in,
            fan_out,
        }
    }
}

impl Architecture {
    pub fn new(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut b = Builder { specs: Vec::new() };
        let mut layers = Vec::new();
        let mut side = config.input_size;
        let mut channels = 3;
        match config.backbone {
            Backbone::Conv4 => {
                for i in 0..4 {
                    let p = format!("block{i}");
                    layers.push(b.conv(&format!("{p}.conv"), channels, config.width, 3));
                    layers.push(b.bn(&format!("{p}.bn"), config.width));
                    layers.push(Layer::Relu);
                    layers.push(Layer::MaxPool);
                    channels = config.width;
                    side = side.div_ceil(2);
                }
            }
            Backbone::Resnet12Like => {
                for i in 0..4 {
                    let p = format!("block{i}");
                    let out = config.width << i;
                    let mut main = Vec::new();
                    let mut cin = channels;
                    for j in 0..3 {
                        main.push(b.conv(&format!("{p}.conv{j}"), cin, out, 3));
                        main.push(b.bn(&format!("{p}.bn{j}"), out));
                        if j < 2 {
                            main.push(Layer::Relu);
                        }
                        cin = out;
                    }
                    let shortcut = vec![
                        b.conv(&format!("{p}.shortcut.conv"), channels, out, 1),
                        b.bn(&format!("{p}.shortcut.bn"), out),
                    ];
                    layers.push(Layer::Residual { main, shortcut });
                    layers.push(Layer::Relu);
                    layers.push(Layer::MaxPool);
                    channels = out;
                    side = side.div_ceil(2);
                }
            }
        }
        layers.push(Layer::Flatten);
        layers.push(b.linear("proj", channels * side * side, config.embed_dim));
        layers.push(Layer::L2Normalize);
        Ok(Self { layers, specs: b.specs })
    }

    pub fn init(&self, config: &EncoderConfig, seed: u64) -> EncoderParams {
        let mut rng = rng::rng_at(seed, &[stream::INIT]);
        let groups = self
            .specs
            .iter()
            .map(|spec| {
                let n: usize = spec.shape.iter().product();
                let data = match spec.init {
                    Init::Kaiming { fan_out } => {
                        let normal = Normal::new(0.0, (2.0 / fan_out as f64).sqrt()).expect("finite std");
                        (0..n).map(|_| normal.sample(&mut rng)).collect()
                    }
                    Init::Uniform { bound } => (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
                    Init::Const(v) => vec![v; n],
                };
                ParamGroup {
                    name: spec.name.clone(),
                    shape: spec.shape.clone(),
                    trainable: spec.trainable,
                    data,
                }
            })
            .collect();
        EncoderParams {
            version: PARAMS_FORMAT_VERSION,
            config: *config,
            groups,
        }
    }
}

/// Initializes encoder parameters deterministically from `seed`.
pub fn build_encoder(config: &EncoderConfig, seed: u64) -> Result<EncoderParams> {
    Ok(Architecture::new(config)?.init(config, seed))
}

/// Cached state of a forward pass, consumed by [`Encoder::backward`].
pub struct ForwardPass {
    caches: Vec<Cache>,
    batch: usize,
}

/// An architecture bound to its configuration. Cheap to build; holds no
/// weights.
pub struct Encoder {
    config: EncoderConfig,
    arch: Architecture,
}

impl Encoder {
    pub fn new(config: &EncoderConfig) -> Result<Self> {
        Ok(Self {
            config: *config,
            arch: Architecture::new(config)?,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn check(&self, params: &EncoderParams) -> Result<()> {
        if params.config != self.config || params.groups.len() != self.arch.specs.len() {
            return Err(Error::shape("parameters were built for a different encoder configuration"));
        }
        for (g, s) in params.groups.iter().zip(&self.arch.specs) {
            if g.shape != s.shape || g.data.len() != s.shape.iter().product::<usize>() {
                return Err(Error::shape(format!("parameter group {} has shape {:?}, expected {:?}", g.name, g.shape, s.shape)));
            }
        }
        Ok(())
    }

    /// Runs the encoder on an `N × 3 × S × S` batch. Returns `N × embed_dim`
    /// unit-norm rows and the cache needed for a backward pass.
    pub fn forward(&self, params: &EncoderParams, input: Tensor4, mode: Mode) -> Result<(Matrix, ForwardPass)> {
        self.check(params)?;
        let s = self.config.input_size;
        if input.c != 3 || input.h != s || input.w != s {
            return Err(Error::shape(format!(
                "encoder expects N×3×{s}×{s} input, got {:?}",
                input.shape()
            )));
        }
        if input.n == 0 {
            return Err(Error::shape("empty batch"));
        }
        let data: Vec<&[f64]> = params.groups.iter().map(|g| g.data.as_slice()).collect();
        let mut caches = Vec::new();
        let batch = input.n;
        let out = layers::forward(&self.arch.layers, &data, input, mode, &mut caches);
        Ok((
            Matrix::from_vec(batch, self.config.embed_dim, out.data),
            ForwardPass { caches, batch },
        ))
    }

    /// Gradient of a scalar loss with respect to the parameters given its
    /// gradient with respect to the embeddings.
    pub fn backward(&self, params: &EncoderParams, pass: &ForwardPass, grad_out: &Matrix) -> Result<Gradients> {
        self.check(params)?;
        if grad_out.rows != pass.batch || grad_out.cols != self.config.embed_dim {
            return Err(Error::shape("output gradient does not match the forward batch"));
        }
        let mut grads = Gradients::zeros_like(params);
        let data: Vec<&[f64]> = params.groups.iter().map(|g| g.data.as_slice()).collect();
        let g = Tensor4::from_vec(grad_out.rows, grad_out.cols, 1, 1, grad_out.data.clone());
        layers::backward(&self.arch.layers, &data, &pass.caches, g, &mut grads.groups, false);
        Ok(grads)
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// statistics.
    pub fn update_running_stats(&self, params: &mut EncoderParams, pass: &ForwardPass) {
        let mut stats = Vec::new();
        layers::batch_stats(&self.arch.layers, &pass.caches, &mut stats);
        for (rm, rv, mean, var) in stats {
            for (r, &m) in params.groups[rm].data.iter_mut().zip(mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
            }
            for (r, &v) in params.groups[rv].data.iter_mut().zip(var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
            }
        }
    }
}

impl Gradients {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        Self {
            groups: params.groups.iter().map(|g| vec![0.0; g.data.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.groups.iter_mut().zip(&other.groups) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

impl EncoderParams {
    pub fn n_trainable(&self) -> usize {
        self.groups.iter().filter(|g| g.trainable).map(|g| g.data.len()).sum()
    }

    pub fn shape_list(&self) -> Vec<(String, Vec<usize>)> {
        self.groups.iter().map(|g| (g.name.clone(), g.shape.clone())).collect()
    }

    pub fn same_shapes(&self, other: &EncoderParams) -> bool {
        self.groups.len() == other.groups.len()
            && self
                .groups
                .iter()
                .zip(&other.groups)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape && a.trainable == b.trainable)
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn group_mut(&mut self, name: &str) -> Option<&mut ParamGroup> {
        self.groups.iter_mut().find(|g| g.name == name)
    }

    /// SHA-256 over group names, shapes and the little-endian bytes of every
    /// value.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for g in &self.groups {
            h.update(g.name.as_bytes());
            for &d in &g.shape {
                h.update((d as u64).to_le_bytes());
            }
            for v in &g.data {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Scales every trainable value by `a`.
    pub fn scaled(&self, a: f64) -> EncoderParams {
        let mut out = self.clone();
        for g in out.groups.iter_mut().filter(|g| g.trainable) {
            for v in &mut g.data {
                *v *= a;
            }
        }
        out
    }
}

/// `key ← m·key + (1 − m)·query` over trainable groups. Buffers of the key
/// encoder are left alone; they track the key encoder's own batches.
pub fn momentum_update_in_place(key: &mut EncoderParams, query: &EncoderParams, m: f64) -> Result<()> {
    if !(0.0..1.0).contains(&m) {
        return Err(Error::invalid(format!("momentum {m} outside [0, 1)")));
    }
    if !key.same_shapes(query) {
        return Err(Error::shape("key and query encoders differ in shape"));
    }
    for (k, q) in key.groups.iter_mut().zip(&query.groups) {
        if !k.trainable {
            continue;
        }
        for (kv, &qv) in k.data.iter_mut().zip(&q.data) {
            *kv = m * *kv + (1.0 - m) * qv;
        }
    }
    Ok(())
}

pub fn momentum_update(key: &EncoderParams, query: &EncoderParams, m: f64) -> Result<EncoderParams> {
    let mut out = key.clone();
    momentum_update_in_place(&mut out, query, m)?;
    Ok(out)
}

/// Packs images into an `N × 3 × S × S` tensor, resizing to `size` when
/// needed.
pub fn images_to_tensor(images: &[Arc<Image>], size: usize) -> Result<Tensor4> {
    let plane = 3 * size * size;
    let mut t = Tensor4::zeros(images.len(), 3, size, size);
    for (i, img) in images.iter().enumerate() {
        if img.channels() != 3 {
            return Err(Error::shape(format!("expected RGB images, got {} channels", img.channels())));
        }
        let dst = &mut t.data[i * plane..(i + 1) * plane];
        if img.height() == size && img.width() == size {
            img.write_chw(dst);
        } else {
            img.resize(size, size).write_chw(dst);
        }
    }
    Ok(t)
}

/// Inference-mode embeddings (running statistics), processed in chunks.
pub fn embed(params: &EncoderParams, images: &[Arc<Image>]) -> Result<Matrix> {
    let encoder = Encoder::new(&params.config)?;
    let d = params.config.embed_dim;
    let mut out = Matrix::zeros(images.len(), d);
    for (ci, chunk) in images.chunks(64).enumerate() {
        let t = images_to_tensor(chunk, params.config.input_size)?;
        let (emb, _) = encoder.forward(params, t, Mode::Eval)?;
        out.data[ci * 64 * d..ci * 64 * d + emb.data.len()].copy_from_slice(&emb.data);
    }
    Ok(out)
}

/// Versioned on-disk container for an encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderCheckpoint {
    pub format: String,
    pub version: u32,
    pub step: u64,
    pub epoch: usize,
    pub params: EncoderParams,
}

pub const CHECKPOINT_FORMAT: &str = "rarefsl-encoder";

impl EncoderCheckpoint {
    pub fn new(params: EncoderParams, epoch: usize, step: u64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: PARAMS_FORMAT_VERSION,
            step,
            epoch,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(s)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format tag `{}`", ck.format)));
        }
        if ck.version != PARAMS_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", ck.version)));
        }
        Encoder::new(&ck.params.config)?.check(&ck.params)?;
        Ok(ck)
    }
}
