//! Few-shot evaluation: per-task metrics, aggregated reports and the
//! multi-task protocol.

pub mod metrics;
pub mod table;

use serde::{Deserialize, Serialize};

pub use metrics::{accuracy, confusion_matrix, f1_from_confusion, macro_f1, mean_std};
pub use table::render_table;

use crate::baseline::{fit_baseline_task, LogRegConfig};
use crate::data::{sample_task, Dataset, EpisodeTask};
use crate::distill::{student_predict, StudentModel, Usage};
use crate::error::{Error, Result};
use crate::nn::EncoderParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_seed: u64,
    pub accuracy: f64,
    pub f1: f64,
    pub per_class_f1: Vec<f64>,
    /// `confusion[true][pred]` over the query set.
    pub confusion: Vec<Vec<u64>>,
}

impl TaskResult {
    pub fn from_predictions(task_seed: u64, pred: &[usize], truth: &[usize], n_classes: usize) -> Result<Self> {
        let confusion = confusion_matrix(pred, truth, n_classes)?;
        let (f1, per_class_f1) = macro_f1(pred, truth, n_classes)?;
        Ok(Self {
            task_seed,
            accuracy: accuracy(pred, truth)?,
            f1,
            per_class_f1,
            confusion,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub f1_average: String,
    pub std: String,
}

impl Default for ReportMeta {
    fn default() -> Self {
        Self {
            f1_average: "macro".into(),
            std: "population".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub method_id: String,
    pub n_way: usize,
    pub k_shot: usize,
    pub per_task: Vec<TaskResult>,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub metadata: ReportMeta,
}

impl Report {
    pub fn from_tasks(method_id: impl Into<String>, n_way: usize, k_shot: usize, per_task: Vec<TaskResult>) -> Self {
        let accs: Vec<f64> = per_task.iter().map(|t| t.accuracy).collect();
        let f1s: Vec<f64> = per_task.iter().map(|t| t.f1).collect();
        let (mean_acc, std_acc) = mean_std(&accs);
        let (mean_f1, std_f1) = mean_std(&f1s);
        Self {
            method_id: method_id.into(),
            n_way,
            k_shot,
            per_task,
            mean_acc,
            std_acc,
            mean_f1,
            std_f1,
            metadata: ReportMeta::default(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Anything that can label a task's query set given its support set.
pub trait FewShotMethod {
    fn id(&self) -> String;

    /// Predicted 0-based labels for `task.query`, in order.
    fn predict(&self, task: &EpisodeTask) -> Result<Vec<usize>>;
}

/// Scores `method` on its predictions for an already sampled task.
pub fn evaluate_task(method: &dyn FewShotMethod, task: &EpisodeTask) -> Result<TaskResult> {
    let pred = method.predict(task)?;
    TaskResult::from_predictions(task.seed, &pred, &task.query_labels(), task.n_way)
}

/// Samples one task per seed, applies `method` and aggregates.
pub fn run_protocol(
    method: &dyn FewShotMethod,
    rare: &Dataset,
    n_way: usize,
    k_shot: usize,
    seeds: &[u64],
) -> Result<Report> {
    if seeds.is_empty() {
        return Err(Error::invalid("protocol needs at least one task seed"));
    }
    let per_task = seeds
        .iter()
        .map(|&s| evaluate_task(method, &sample_task(rare, n_way, k_shot, s)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(Report::from_tasks(method.id(), n_way, k_shot, per_task))
}

/// Frozen encoder plus logistic regression fit on each task's support set.
pub struct BaselineMethod<'a> {
    pub encoder: &'a EncoderParams,
    pub logreg: LogRegConfig,
}

impl FewShotMethod for BaselineMethod<'_> {
    fn id(&self) -> String {
        "baseline".into()
    }

    fn predict(&self, task: &EpisodeTask) -> Result<Vec<usize>> {
        let teacher = fit_baseline_task(self.encoder, task, &self.logreg)?;
        Ok(teacher.predict_proba(&task.query_images())?.argmax_rows())
    }
}

/// An already distilled student, used directly or with a refit classifier.
pub struct StudentMethod<'a> {
    pub student: &'a StudentModel,
    pub usage: Usage,
    pub logreg: LogRegConfig,
}

impl FewShotMethod for StudentMethod<'_> {
    fn id(&self) -> String {
        format!("student_{}", self.usage.name())
    }

    fn predict(&self, task: &EpisodeTask) -> Result<Vec<usize>> {
        if task.classes != self.student.class_map {
            return Err(Error::invalid("student was distilled for a different class set"));
        }
        let probs = student_predict(
            self.student,
            &task.query_images(),
            self.usage,
            Some(&task.support),
            &self.logreg,
        )?;
        Ok(probs.argmax_rows())
    }
}
