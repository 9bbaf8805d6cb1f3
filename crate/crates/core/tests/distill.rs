use rarefsl::baseline::{fit_baseline_task, LogRegConfig, TeacherModel};
use rarefsl::data::{make_synthetic_dataset, sample_task, split_base_rare, AugmentConfig, Dataset, EpisodeTask, SynthParams};
use rarefsl::distill::{
    distill, make_pseudo_labels, student_predict, training_targets, DistillConfig, LabelDesign, LossVariant,
    StudentCheckpoint, Usage,
};
use rarefsl::nn::{build_encoder, embed, Backbone, EncoderConfig};

struct World {
    base: Dataset,
    task: EpisodeTask,
    teacher: TeacherModel,
    augment: AugmentConfig,
}

fn world() -> World {
    let data = make_synthetic_dataset(&SynthParams {
        n_classes: 5,
        per_class: 10,
        image_size: 16,
        ..Default::default()
    })
    .unwrap();
    let (base, rare) = split_base_rare(&data, 3).unwrap();
    let enc = EncoderConfig {
        backbone: Backbone::Conv4,
        input_size: 16,
        embed_dim: 16,
        width: 4,
    };
    let encoder = build_encoder(&enc, 5).unwrap();
    let task = sample_task(&rare, 3, 2, 11).unwrap();
    let teacher = fit_baseline_task(&encoder, &task, &LogRegConfig::default()).unwrap();
    let augment = AugmentConfig {
        output_size: 16,
        ..Default::default()
    };
    World {
        base,
        task,
        teacher,
        augment,
    }
}

fn short(design: LabelDesign, variant: LossVariant, epochs: usize) -> DistillConfig {
    DistillConfig {
        label_design: design,
        loss_variant: variant,
        epochs,
        batch_size: 8,
        queue_size: 16,
        ..DistillConfig::desk()
    }
}

#[test]
fn zero_alpha_targets_are_teacher_one_hot() {
    let w = world();
    let probs = w.teacher.predict_proba(&w.base.images()).unwrap();
    let labels = make_pseudo_labels(&probs, LabelDesign::AdaptiveHard).unwrap();
    let student = rarefsl::nn::Matrix::from_vec(labels.len(), 3, vec![1.0 / 3.0; labels.len() * 3]);
    let targets = training_targets(&labels, &student, 0.0).unwrap();
    for (t, row) in targets.iter().zip(probs.iter_rows()) {
        let best = rarefsl::nn::argmax(row);
        let one_hot: Vec<f64> = (0..3).map(|c| if c == best { 1.0 } else { 0.0 }).collect();
        assert_eq!(t, &one_hot);
    }
    let cfg = short(LabelDesign::AdaptiveHard, LossVariant::ClsOnly, 5);
    assert_eq!(cfg.alpha_at(0), 0.7 / 5.0);
    assert_eq!(cfg.alpha_at(4), 0.7);
    assert_eq!(short(LabelDesign::Hard, LossVariant::ClsOnly, 5).alpha_at(4), 0.0);
}

#[test]
fn student_shares_teacher_architecture() {
    let w = world();
    let (student, logs) = distill(&w.base, &w.teacher, &short(LabelDesign::Hard, LossVariant::ConPlusCls, 2), &w.augment).unwrap();
    assert!(student.query.same_shapes(&w.teacher.encoder));
    assert_ne!(student.query.hash(), w.teacher.encoder.hash());
    assert_eq!(student.head.n_classes(), 3);
    assert_eq!(student.class_map, w.task.classes);
    assert_eq!(student.provenance.teacher_encoder_hash, w.teacher.encoder.hash());
    assert_eq!(logs.len(), 2);
    assert!(logs.iter().all(|l| l.con_loss.is_some() && l.cls_loss.is_some() && l.reg_loss.is_none()));

    let json = serde_json::to_string(&StudentCheckpoint::new(student.clone())).unwrap();
    let back = StudentCheckpoint::from_json(&json).unwrap().student;
    let imgs = &w.base.images()[..4];
    assert_eq!(embed(&student.query, imgs).unwrap(), embed(&back.query, imgs).unwrap());
}

#[test]
fn distillation_is_deterministic() {
    let w = world();
    let cfg = short(LabelDesign::AdaptiveSoft, LossVariant::ConPlusReg, 2);
    let (a, la) = distill(&w.base, &w.teacher, &cfg, &w.augment).unwrap();
    let (b, lb) = distill(&w.base, &w.teacher, &cfg, &w.augment).unwrap();
    assert_eq!(a.query.hash(), b.query.hash());
    assert_eq!(la.iter().map(|l| l.total_loss).collect::<Vec<_>>(), lb.iter().map(|l| l.total_loss).collect::<Vec<_>>());
}

#[test]
fn classification_loss_falls() {
    let w = world();
    let (_, logs) = distill(&w.base, &w.teacher, &short(LabelDesign::Hard, LossVariant::ClsOnly, 8), &w.augment).unwrap();
    let first = logs[0].cls_loss.unwrap();
    let last = logs.last().unwrap().cls_loss.unwrap();
    assert!(last < first, "L_cls {first} -> {last}");
    assert!(logs.iter().all(|l| l.con_loss.is_none()));
}

#[test]
fn prediction_modes() {
    let w = world();
    let (student, _) = distill(&w.base, &w.teacher, &short(LabelDesign::Soft, LossVariant::ClsOnly, 1), &w.augment).unwrap();
    let query = w.task.query_images();
    let lr = LogRegConfig::default();
    let direct = student_predict(&student, &query, Usage::Direct, None, &lr).unwrap();
    let with_support = student_predict(&student, &query, Usage::Direct, Some(&w.task.support), &lr).unwrap();
    assert_eq!(direct, with_support);
    assert!(student_predict(&student, &query, Usage::LrRefit, None, &lr).is_err());
    let refit = student_predict(&student, &query, Usage::LrRefit, Some(&w.task.support), &lr).unwrap();
    for m in [&direct, &refit] {
        assert_eq!((m.rows, m.cols), (query.len(), 3));
        assert!(m.iter_rows().all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-9));
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let w = world();
    let bad_alpha = DistillConfig {
        alpha_final: 1.5,
        ..short(LabelDesign::AdaptiveHard, LossVariant::ClsOnly, 1)
    };
    assert!(distill(&w.base, &w.teacher, &bad_alpha, &w.augment).is_err());
    let wrong_size = AugmentConfig {
        output_size: 32,
        ..w.augment
    };
    assert!(distill(&w.base, &w.teacher, &short(LabelDesign::Hard, LossVariant::ClsOnly, 1), &wrong_size).is_err());
}
