//! Two-view augmentation: random resized crop, horizontal flip, color jitter
//! and Gaussian blur.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::color::{hsv_to_rgb, rgb_to_hsv};
use super::image::Image;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterStrengths {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Crop area as a fraction of the source image, `(lo, hi)`.
    pub crop_scale_range: (f64, f64),
    pub flip_prob: f64,
    pub jitter_strengths: JitterStrengths,
    pub blur_prob: f64,
    /// Blur standard deviation range in output pixels.
    pub blur_sigma_range: (f64, f64),
    pub output_size: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop_scale_range: (0.5, 1.0),
            flip_prob: 0.5,
            jitter_strengths: JitterStrengths {
                brightness: 0.4,
                contrast: 0.4,
                saturation: 0.4,
                hue: 0.1,
            },
            blur_prob: 0.5,
            blur_sigma_range: (0.1, 1.0),
            output_size: 32,
        }
    }
}

impl AugmentConfig {
    /// A configuration whose only effect is resizing to `output_size`.
    pub fn identity(output_size: usize) -> Self {
        Self {
            crop_scale_range: (1.0, 1.0),
            flip_prob: 0.0,
            jitter_strengths: JitterStrengths {
                brightness: 0.0,
                contrast: 0.0,
                saturation: 0.0,
                hue: 0.0,
            },
            blur_prob: 0.0,
            blur_sigma_range: (0.1, 1.0),
            output_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid(format!("crop scale range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1")));
        }
        for (name, p) in [("flip_prob", self.flip_prob), ("blur_prob", self.blur_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} = {p} is not a probability")));
            }
        }
        let j = &self.jitter_strengths;
        if [j.brightness, j.contrast, j.saturation].iter().any(|&v| !(0.0..=1.0).contains(&v))
            || !(0.0..=0.5).contains(&j.hue)
        {
            return Err(Error::invalid("jitter strengths must lie in [0, 1] (hue in [0, 0.5])"));
        }
        let (slo, shi) = self.blur_sigma_range;
        if !(slo > 0.0 && slo <= shi) {
            return Err(Error::invalid("blur sigma range must satisfy 0 < lo <= hi"));
        }
        if self.output_size < 8 {
            return Err(Error::invalid(format!("output size {} is below 8", self.output_size)));
        }
        Ok(())
    }
}

/// One concrete draw of augmentation parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentParams {
    /// `(top, left, height, width)` in source pixels.
    pub crop: (f64, f64, f64, f64),
    pub flip: bool,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue_shift: f64,
    pub blur_sigma: Option<f64>,
}

fn factor(rng: &mut Rng, strength: f64) -> f64 {
    if strength > 0.0 {
        rng.random_range((1.0 - strength).max(0.0)..=1.0 + strength)
    } else {
        1.0
    }
}

/// Draws augmentation parameters for a `height × width` source image.
pub fn sample_params(config: &AugmentConfig, height: usize, width: usize, rng: &mut Rng) -> AugmentParams {
    let (h, w) = (height as f64, width as f64);
    let area = h * w;
    let (lo, hi) = config.crop_scale_range;
    let log_ratio = ((3.0f64 / 4.0).ln(), (4.0f64 / 3.0).ln());
    let mut crop = (0.0, 0.0, h, w);
    for _ in 0..10 {
        let target = area * if lo < hi { rng.random_range(lo..=hi) } else { lo };
        let ratio = rng.random_range(log_ratio.0..=log_ratio.1).exp();
        let cw = (target * ratio).sqrt();
        let ch = (target / ratio).sqrt();
        if cw <= w && ch <= h {
            let top = rng.random_range(0.0..=h - ch);
            let left = rng.random_range(0.0..=w - cw);
            crop = (top, left, ch, cw);
            break;
        }
    }
    let flip = rng.random_bool(config.flip_prob);
    let j = &config.jitter_strengths;
    let brightness = factor(rng, j.brightness);
    let contrast = factor(rng, j.contrast);
    let saturation = factor(rng, j.saturation);
    let hue_shift = if j.hue > 0.0 {
        rng.random_range(-j.hue..=j.hue)
    } else {
        0.0
    };
    let blur_sigma = if rng.random_bool(config.blur_prob) {
        let (a, b) = config.blur_sigma_range;
        Some(if a < b { rng.random_range(a..=b) } else { a })
    } else {
        None
    };
    AugmentParams {
        crop,
        flip,
        brightness,
        contrast,
        saturation,
        hue_shift,
        blur_sigma,
    }
}

fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let weights: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32)
        .collect();
    let norm: f32 = weights.iter().sum();
    let weights: Vec<f32> = weights.iter().map(|w| w / norm).collect();
    let (h, w, c) = img.dims();
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        if n == 1 {
            return 0;
        }
        while i < 0 || i >= n {
            i = if i < 0 { -i } else { 2 * (n - 1) - i };
        }
        i as usize
    };
    let mut tmp = Image::filled(h, w, c, 0.0);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, wt) in weights.iter().enumerate() {
                    let xx = reflect(x as isize + k as isize - radius, w);
                    acc += wt * img.get(y, xx, ch);
                }
                tmp.set(y, x, ch, acc);
            }
        }
    }
    let mut out = Image::filled(h, w, c, 0.0);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, wt) in weights.iter().enumerate() {
                    let yy = reflect(y as isize + k as isize - radius, h);
                    acc += wt * tmp.get(yy, x, ch);
                }
                out.set(y, x, ch, acc);
            }
        }
    }
    out
}

/// Applies a parameter draw. Steps whose parameter is neutral are skipped,
/// so an all-identity draw reproduces the resized input exactly.
pub fn apply(image: &Image, params: &AugmentParams, output_size: usize) -> Image {
    let (top, left, ch, cw) = params.crop;
    let mut out = image.resample(top, left, ch, cw, output_size, output_size);
    if params.flip {
        out = out.flip_horizontal();
    }
    let rgb = out.channels() == 3;
    if params.brightness != 1.0 {
        let b = params.brightness as f32;
        for v in out.data_mut() {
            *v = (*v * b).clamp(0.0, 1.0);
        }
    }
    if params.contrast != 1.0 {
        let c = params.contrast as f32;
        let mean = if rgb {
            let px = out.data().chunks_exact(3);
            let n = px.len() as f32;
            px.map(|p| luma(p[0], p[1], p[2])).sum::<f32>() / n
        } else {
            out.data().iter().sum::<f32>() / out.data().len() as f32
        };
        for v in out.data_mut() {
            *v = ((*v - mean) * c + mean).clamp(0.0, 1.0);
        }
    }
    if rgb && params.saturation != 1.0 {
        let s = params.saturation as f32;
        for p in out.data_mut().chunks_exact_mut(3) {
            let g = luma(p[0], p[1], p[2]);
            for v in p.iter_mut() {
                *v = ((*v - g) * s + g).clamp(0.0, 1.0);
            }
        }
    }
    if rgb && params.hue_shift != 0.0 {
        let dh = params.hue_shift as f32;
        for p in out.data_mut().chunks_exact_mut(3) {
            let (h, s, v) = rgb_to_hsv(p[0], p[1], p[2]);
            let (r, g, b) = hsv_to_rgb(h + dh, s, v);
            p[0] = r;
            p[1] = g;
            p[2] = b;
        }
    }
    if let Some(sigma) = params.blur_sigma {
        out = gaussian_blur(&out, sigma);
    }
    out.clamp_unit();
    out
}

/// Two independent augmentations of one image, deterministic in `seed`.
pub fn augment_twice(image: &Image, config: &AugmentConfig, seed: u64) -> (Image, Image) {
    let mut rng = rng::rng(seed);
    let pq = sample_params(config, image.height(), image.width(), &mut rng);
    let pk = sample_params(config, image.height(), image.width(), &mut rng);
    (
        apply(image, &pq, config.output_size),
        apply(image, &pk, config.output_size),
    )
}
