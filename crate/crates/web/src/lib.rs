//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export returns plain numbers or RGBA bytes; the page draws them
//! onto canvases.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use rarefsl::data::{augment_twice, make_synthetic_dataset, AugmentConfig, Dataset, Image, JitterStrengths, SynthParams};
use rarefsl::distill::{adapt_labels, alpha_schedule, make_pseudo_labels, LabelDesign};
use rarefsl::nn::Matrix;
use wasm_bindgen::prelude::*;

fn dataset(n_classes: usize, per_class: usize, size: usize, separability: f64, seed: u64) -> Result<Dataset, String> {
    make_synthetic_dataset(&SynthParams {
        n_classes,
        per_class: per_class.max(2),
        image_size: size,
        separability,
        seed,
    })
    .map_err(|e| e.to_string())
}

/// Pastes `images` left to right into one RGBA strip.
fn strip(images: &[&Image]) -> Vec<u8> {
    let (h, w) = (images[0].height(), images[0].width());
    let total_w = w * images.len();
    let mut out = vec![255u8; h * total_w * 4];
    for (i, img) in images.iter().enumerate() {
        let rgb = img.to_rgb8();
        for y in 0..h {
            for x in 0..w {
                let src = (y * w + x) * 3;
                let dst = (y * total_w + i * w + x) * 4;
                out[dst..dst + 3].copy_from_slice(&rgb[src..src + 3]);
            }
        }
    }
    out
}

/// Grid with one row per class and `per_row` samples per row, as RGBA of
/// size `(per_row·size) × (n_classes·size)`.
pub fn preview_grid(
    n_classes: usize,
    per_row: usize,
    size: usize,
    separability: f64,
    seed: u64,
) -> Result<Vec<u8>, String> {
    if per_row == 0 {
        return Err("per_row must be positive".into());
    }
    let data = dataset(n_classes, per_row, size, separability, seed)?;
    let mut out = Vec::with_capacity(n_classes * per_row * size * size * 4);
    for class in 0..n_classes {
        let row: Vec<&Image> = data
            .samples
            .iter()
            .filter(|s| s.class_id == class)
            .take(per_row)
            .map(|s| s.image.as_ref())
            .collect();
        out.extend(strip(&row));
    }
    Ok(out)
}

/// Strength settings for [`views`]: minimum crop scale, jitter strength (all
/// four jitter components scale together) and blur probability.
pub fn augment_config(size: usize, crop_min: f64, jitter: f64, blur_prob: f64) -> AugmentConfig {
    AugmentConfig {
        crop_scale_range: (crop_min, 1.0),
        jitter_strengths: JitterStrengths {
            brightness: jitter,
            contrast: jitter,
            saturation: jitter,
            hue: jitter / 4.0,
        },
        blur_prob,
        output_size: size,
        ..AugmentConfig::default()
    }
}

/// The first sample of `class` followed by two augmented views of it, as one
/// RGBA strip of size `(3·size) × size`.
#[allow(clippy::too_many_arguments)]
pub fn views(
    n_classes: usize,
    size: usize,
    separability: f64,
    seed: u64,
    class: usize,
    view_seed: u64,
    crop_min: f64,
    jitter: f64,
    blur_prob: f64,
) -> Result<Vec<u8>, String> {
    let data = dataset(n_classes, 2, size, separability, seed)?;
    let sample = data
        .samples
        .iter()
        .find(|s| s.class_id == class)
        .ok_or_else(|| format!("class {class} outside 0..{n_classes}"))?;
    let config = augment_config(size, crop_min, jitter, blur_prob);
    config.validate().map_err(|e| e.to_string())?;
    let (a, b) = augment_twice(&sample.image, &config, view_seed);
    Ok(strip(&[sample.image.as_ref(), &a, &b]))
}

/// Training targets per epoch for one sample: rows of `[α_t, y_0, …, y_{N−1}]`
/// for `t = 1..=epochs`, flattened. The student's prediction is held fixed.
pub fn label_trajectory(
    teacher: &[f64],
    student: &[f64],
    design: &str,
    epochs: usize,
    alpha_final: f64,
) -> Result<Vec<f64>, String> {
    let design: LabelDesign = design.parse().map_err(|e: rarefsl::Error| e.to_string())?;
    if teacher.len() != student.len() || teacher.is_empty() {
        return Err("teacher and student need the same non-zero length".into());
    }
    if epochs == 0 {
        return Err("epochs must be positive".into());
    }
    if !(0.0..=1.0).contains(&alpha_final) {
        return Err("alpha_final must lie in [0, 1]".into());
    }
    let normalize = |v: &[f64]| -> Result<Vec<f64>, String> {
        let s: f64 = v.iter().sum();
        if !(s > 0.0) || v.iter().any(|x| *x < 0.0 || !x.is_finite()) {
            return Err("probabilities must be non-negative with a positive sum".into());
        }
        Ok(v.iter().map(|x| x / s).collect())
    };
    let t = normalize(teacher)?;
    let p = normalize(student)?;
    let y = make_pseudo_labels(&Matrix::from_vec(1, t.len(), t), design)
        .map_err(|e| e.to_string())?
        .remove(0);
    let mut out = Vec::with_capacity(epochs * (p.len() + 1));
    for epoch in 1..=epochs {
        let alpha = if design.is_adaptive() {
            alpha_schedule(epoch, epochs, alpha_final)
        } else {
            0.0
        };
        out.push(alpha);
        out.extend(adapt_labels(&y, &p, alpha).map_err(|e| e.to_string())?.vector);
    }
    Ok(out)
}

#[wasm_bindgen(js_name = previewGrid)]
pub fn preview_grid_js(n_classes: usize, per_row: usize, size: usize, separability: f64, seed: u32) -> Result<Vec<u8>, JsError> {
    preview_grid(n_classes, per_row, size, separability, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = augmentViews)]
#[allow(clippy::too_many_arguments)]
pub fn views_js(
    n_classes: usize,
    size: usize,
    separability: f64,
    seed: u32,
    class: usize,
    view_seed: u32,
    crop_min: f64,
    jitter: f64,
    blur_prob: f64,
) -> Result<Vec<u8>, JsError> {
    views(n_classes, size, separability, seed as u64, class, view_seed as u64, crop_min, jitter, blur_prob)
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = labelTrajectory)]
pub fn label_trajectory_js(
    teacher: Vec<f64>,
    student: Vec<f64>,
    design: &str,
    epochs: usize,
    alpha_final: f64,
) -> Result<Vec<f64>, JsError> {
    label_trajectory(&teacher, &student, design, epochs, alpha_final).map_err(|e| JsError::new(&e))
}
