//! Tiny encoder with formula-set weights against a reference computed by
//! `tests/oracles/tiny_encoder.py`.

use std::sync::Arc;

use rarefsl::baseline::extract_features;
use rarefsl::data::Image;
use rarefsl::nn::{build_encoder, embed, Backbone, EncoderConfig, EncoderParams};

fn group_value(name: &str, g: usize, i: usize) -> f64 {
    let (g, i) = (g as f64, i as f64);
    if name.ends_with(".weight") {
        0.4 * (1.3 * i + 0.7 * g + 0.1).sin() + 0.25
    } else if name.ends_with(".bias") {
        0.1 * (0.9 * i + g).cos()
    } else if name.ends_with(".gamma") {
        1.0 + 0.1 * (i + g).cos()
    } else if name.ends_with(".beta") {
        0.05 * (2.0 * i + g).sin()
    } else if name.ends_with(".running_mean") {
        0.1 * (i + 0.5 * g).sin()
    } else if name.ends_with(".running_var") {
        0.8 + 0.1 * i
    } else {
        panic!("unexpected group {name}")
    }
}

fn hand_set() -> EncoderParams {
    let config = EncoderConfig {
        backbone: Backbone::Conv4,
        input_size: 4,
        embed_dim: 3,
        width: 2,
    };
    let mut p = build_encoder(&config, 0).unwrap();
    for (g, group) in p.groups.iter_mut().enumerate() {
        for (i, v) in group.data.iter_mut().enumerate() {
            *v = group_value(&group.name, g, i);
        }
    }
    p
}

fn fixed_image() -> Arc<Image> {
    let data = (0..48).map(|i| i as f32 / 47.0).collect();
    Arc::new(Image::new(4, 4, 3, data))
}

fn reference() -> Vec<f64> {
    let text = include_str!("oracles/tiny_encoder.json");
    let v: serde_json::Value = serde_json::from_str(text).unwrap();
    v["embedding"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn hand_set_encoder_matches_reference() {
    let p = hand_set();
    assert_eq!(p.groups.len(), 22);
    let out = embed(&p, &[fixed_image()]).unwrap();
    for (a, b) in out.row(0).iter().zip(reference()) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn feature_extraction_shares_the_oracle() {
    let p = hand_set();
    let img = fixed_image();
    let f = extract_features(&p, &[img.clone(), img]).unwrap();
    assert_eq!((f.rows, f.cols), (2, 3));
    for r in 0..2 {
        for (a, b) in f.row(r).iter().zip(reference()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
