use rarefsl::data::{make_synthetic_dataset, AugmentConfig, Dataset, SynthParams};
use rarefsl::nn::{embed, Backbone, EncoderCheckpoint, EncoderConfig};
use rarefsl::pretrain::{pretrain, pretrain_from, PretrainConfig, PretrainState};

fn small_world() -> (Dataset, EncoderConfig, PretrainConfig, AugmentConfig) {
    let data = make_synthetic_dataset(&SynthParams {
        n_classes: 4,
        per_class: 16,
        image_size: 16,
        ..Default::default()
    })
    .unwrap();
    let enc = EncoderConfig {
        backbone: Backbone::Conv4,
        input_size: 16,
        embed_dim: 16,
        width: 4,
    };
    let cfg = PretrainConfig {
        epochs: 2,
        batch_size: 8,
        queue_size: 16,
        ..PretrainConfig::desk()
    };
    let augment = AugmentConfig {
        output_size: 16,
        ..Default::default()
    };
    (data, enc, cfg, augment)
}

#[test]
fn same_seed_same_encoder() {
    let (data, enc, cfg, augment) = small_world();
    let (a, log_a) = pretrain(&data, &enc, &cfg, &augment).unwrap();
    let (b, log_b) = pretrain(&data, &enc, &cfg, &augment).unwrap();
    assert_eq!(a.params.hash(), b.params.hash());
    assert_eq!(log_a.len(), 2);
    assert_eq!(
        log_a.iter().map(|l| l.mean_loss).collect::<Vec<_>>(),
        log_b.iter().map(|l| l.mean_loss).collect::<Vec<_>>()
    );
    let c = pretrain(&data, &enc, &PretrainConfig { seed: 9, ..cfg }, &augment).unwrap().0;
    assert_ne!(a.params.hash(), c.params.hash());
}

#[test]
fn resume_matches_uninterrupted_run() {
    let (data, enc, cfg, augment) = small_world();
    let cfg = PretrainConfig { epochs: 3, ..cfg };
    let (full, _) = pretrain(&data, &enc, &cfg, &augment).unwrap();

    let mut state = PretrainState::new(&enc, &cfg).unwrap();
    pretrain_from(&mut state, &data, &PretrainConfig { epochs: 1, ..cfg.clone() }, &augment, |_, _| Ok(())).unwrap();
    let saved = serde_json::to_string(&state).unwrap();
    let mut restored: PretrainState = serde_json::from_str(&saved).unwrap();
    assert_eq!(restored.epoch, 1);
    let rest = pretrain_from(&mut restored, &data, &cfg, &augment, |_, _| Ok(())).unwrap();
    assert_eq!(rest.iter().map(|l| l.epoch).collect::<Vec<_>>(), vec![1, 2]);
    assert_eq!(restored.query.hash(), full.params.hash());
}

#[test]
fn checkpoint_round_trip_preserves_embeddings() {
    let (data, enc, cfg, augment) = small_world();
    let (ck, _) = pretrain(&data, &enc, &PretrainConfig { epochs: 1, ..cfg }, &augment).unwrap();
    let back = EncoderCheckpoint::from_json(&ck.to_json().unwrap()).unwrap();
    let images = &data.images()[..6];
    assert_eq!(embed(&ck.params, images).unwrap(), embed(&back.params, images).unwrap());
    assert_eq!(back.epoch, 1);
}

#[test]
fn mismatched_augment_size_is_rejected() {
    let (data, enc, cfg, augment) = small_world();
    let bad = AugmentConfig {
        output_size: 32,
        ..augment
    };
    assert!(pretrain(&data, &enc, &cfg, &bad).is_err());
}
