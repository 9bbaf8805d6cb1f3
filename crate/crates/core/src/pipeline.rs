//! End-to-end runs: data, pretraining, and per-task baseline, distillation
//! and evaluation.

use serde::{Deserialize, Serialize};

use crate::baseline::{fit_baseline_task, TeacherModel};
use crate::config::RunConfig;
use crate::data::{make_synthetic_dataset, sample_task, split_base_rare, Dataset, EpisodeTask};
use crate::distill::{distill_with, student_predict, DistillEpochLog, StudentModel, Usage};
use crate::error::{Error, Result};
use crate::eval::{Report, TaskResult};
use crate::nn::{EncoderCheckpoint, EncoderParams};
use crate::pretrain::{pretrain_from, EpochLog, PretrainState};

/// The configured dataset: generated when no source is set, loaded (and
/// resized to the encoder input) otherwise.
pub fn load_data(config: &RunConfig) -> Result<Dataset> {
    match &config.data.source {
        None => make_synthetic_dataset(&config.data.synthetic),
        #[cfg(feature = "io")]
        Some(path) => crate::data::io::load_dataset_with(
            std::path::Path::new(path),
            config.data.layout,
            Some(config.encoder.input_size),
        ),
        #[cfg(not(feature = "io"))]
        Some(_) => Err(Error::UnsupportedConfig("built without image loading".into())),
    }
}

pub fn split(config: &RunConfig, dataset: &Dataset) -> Result<(Dataset, Dataset)> {
    split_base_rare(dataset, config.data.n_rare)
}

/// Everything produced for one evaluation task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_seed: u64,
    pub baseline: TaskResult,
    pub student_direct: TaskResult,
    pub student_lr_refit: TaskResult,
    pub distill_log: Vec<DistillEpochLog>,
}

pub fn method_ids(config: &RunConfig) -> [String; 3] {
    let d = &config.distill;
    let stem = format!("distill[{},{}]", d.label_design, d.loss_variant);
    ["baseline".into(), format!("{stem}/direct"), format!("{stem}/lr_refit")]
}

/// Teacher, student and the three scored predictions for one sampled task.
pub fn run_task(
    config: &RunConfig,
    encoder: &EncoderParams,
    base: &Dataset,
    task: &EpisodeTask,
    mut on_epoch: impl FnMut(&DistillEpochLog) -> Result<()>,
) -> Result<(TeacherModel, StudentModel, TaskOutcome)> {
    let n = task.n_way;
    let truth = task.query_labels();
    let query = task.query_images();
    let teacher = fit_baseline_task(encoder, task, &config.baseline)?;
    let baseline_pred = teacher.predict_proba(&query)?.argmax_rows();
    let (student, distill_log) = distill_with(base, &teacher, &config.distill, &config.augment, &mut on_epoch)?;
    let direct = student_predict(&student, &query, Usage::Direct, None, &config.baseline)?.argmax_rows();
    let refit =
        student_predict(&student, &query, Usage::LrRefit, Some(&task.support), &config.baseline)?.argmax_rows();
    let outcome = TaskOutcome {
        task_seed: task.seed,
        baseline: TaskResult::from_predictions(task.seed, &baseline_pred, &truth, n)?,
        student_direct: TaskResult::from_predictions(task.seed, &direct, &truth, n)?,
        student_lr_refit: TaskResult::from_predictions(task.seed, &refit, &truth, n)?,
        distill_log,
    };
    Ok((teacher, student, outcome))
}

/// Aggregates per-task outcomes into baseline, direct and refit reports.
pub fn reports(config: &RunConfig, tasks: &[TaskOutcome]) -> Vec<Report> {
    let [b, d, l] = method_ids(config);
    let (n, k) = (config.eval.n_way, config.eval.k_shot);
    vec![
        Report::from_tasks(b, n, k, tasks.iter().map(|t| t.baseline.clone()).collect()),
        Report::from_tasks(d, n, k, tasks.iter().map(|t| t.student_direct.clone()).collect()),
        Report::from_tasks(l, n, k, tasks.iter().map(|t| t.student_lr_refit.clone()).collect()),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub tasks: Vec<TaskOutcome>,
    pub reports: Vec<Report>,
}

/// Runs every configured task against a pretrained encoder.
pub fn evaluate_encoder(
    config: &RunConfig,
    encoder: &EncoderParams,
    base: &Dataset,
    rare: &Dataset,
    mut on_epoch: impl FnMut(u64, &DistillEpochLog) -> Result<()>,
) -> Result<Evaluation> {
    let mut tasks = Vec::new();
    for seed in config.task_seeds() {
        let task = sample_task(rare, config.eval.n_way, config.eval.k_shot, seed)?;
        let (_, _, outcome) = run_task(config, encoder, base, &task, |log| on_epoch(seed, log))?;
        tasks.push(outcome);
    }
    let reports = reports(config, &tasks);
    Ok(Evaluation { tasks, reports })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub encoder: EncoderCheckpoint,
    pub pretrain_log: Vec<EpochLog>,
    pub evaluation: Evaluation,
}

/// Data → pretraining → all evaluation tasks.
pub fn run_experiment(config: &RunConfig) -> Result<Experiment> {
    config.validate()?;
    let dataset = load_data(config)?;
    let (base, rare) = split(config, &dataset)?;
    if rare.is_empty() {
        return Err(Error::invalid("rare split is empty"));
    }
    let mut state = PretrainState::new(&config.encoder, &config.pretrain)?;
    let pretrain_log = pretrain_from(&mut state, &base, &config.pretrain, &config.augment, |_, _| Ok(()))?;
    let encoder = state.checkpoint();
    let evaluation = evaluate_encoder(config, &encoder.params, &base, &rare, |_, _| Ok(()))?;
    Ok(Experiment {
        encoder,
        pretrain_log,
        evaluation,
    })
}
