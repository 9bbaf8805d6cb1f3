//! Frozen pretrained encoder plus a logistic-regression head fit on the
//! support set.

pub mod logreg;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use logreg::{LogRegConfig, LogisticRegression};

use crate::data::{EpisodeTask, Image, TaskSample};
use crate::error::{Error, Result};
use crate::nn::{embed, EncoderParams, Matrix};

/// Inference-mode features: clean images, resized to the encoder input,
/// running normalization statistics.
pub fn extract_features(encoder: &EncoderParams, images: &[Arc<Image>]) -> Result<Matrix> {
    embed(encoder, images)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TeacherModel {
    pub encoder: EncoderParams,
    pub classifier: LogisticRegression,
    /// `class_map[label]` is the rare-dataset class id of task label `label`.
    pub class_map: Vec<usize>,
}

/// Fits the classifier on the support images. The encoder is only read.
pub fn fit_baseline(
    encoder: &EncoderParams,
    support: &[TaskSample],
    class_map: &[usize],
    config: &LogRegConfig,
) -> Result<TeacherModel> {
    let classifier = fit_on_support(encoder, support, class_map.len(), config)?;
    Ok(TeacherModel {
        encoder: encoder.clone(),
        classifier,
        class_map: class_map.to_vec(),
    })
}

pub fn fit_baseline_task(encoder: &EncoderParams, task: &EpisodeTask, config: &LogRegConfig) -> Result<TeacherModel> {
    fit_baseline(encoder, &task.support, &task.classes, config)
}

pub(crate) fn fit_on_support(
    encoder: &EncoderParams,
    support: &[TaskSample],
    n_way: usize,
    config: &LogRegConfig,
) -> Result<LogisticRegression> {
    if support.is_empty() {
        return Err(Error::invalid("support set is empty"));
    }
    let images: Vec<Arc<Image>> = support.iter().map(|s| Arc::clone(&s.image)).collect();
    let labels: Vec<usize> = support.iter().map(|s| s.label).collect();
    let mut seen = vec![false; n_way];
    for &l in &labels {
        *seen.get_mut(l).ok_or_else(|| Error::invalid(format!("support label {l} outside 0..{n_way}")))? = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::invalid("support set does not cover every class"));
    }
    let features = extract_features(encoder, &images)?;
    LogisticRegression::fit(&features, &labels, n_way, config)
}

impl TeacherModel {
    pub fn n_way(&self) -> usize {
        self.classifier.n_classes()
    }

    pub fn predict_proba(&self, images: &[Arc<Image>]) -> Result<Matrix> {
        self.classifier.predict_proba(&extract_features(&self.encoder, images)?)
    }

    pub fn to_record(&self, encoder_path: impl Into<String>) -> TeacherRecord {
        TeacherRecord {
            format: TEACHER_FORMAT.into(),
            encoder_checkpoint: encoder_path.into(),
            encoder_hash: self.encoder.hash(),
            classifier: self.classifier.clone(),
            class_map: self.class_map.clone(),
        }
    }

    /// Rebuilds a teacher from its record and the referenced encoder,
    /// checking that the encoder is the one the classifier was fit on.
    pub fn from_record(record: TeacherRecord, encoder: EncoderParams) -> Result<Self> {
        if record.format != TEACHER_FORMAT {
            return Err(Error::Checkpoint(format!("unexpected teacher format `{}`", record.format)));
        }
        let hash = encoder.hash();
        if hash != record.encoder_hash {
            return Err(Error::Checkpoint(format!(
                "encoder hash {hash} does not match the teacher's {}",
                record.encoder_hash
            )));
        }
        if record.classifier.weights.cols != encoder.config.embed_dim {
            return Err(Error::shape("classifier width differs from the encoder embedding size"));
        }
        Ok(Self {
            encoder,
            classifier: record.classifier,
            class_map: record.class_map,
        })
    }
}

pub const TEACHER_FORMAT: &str = "rarefsl-teacher";

/// JSON form of a teacher: a reference to the encoder checkpoint plus the
/// classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherRecord {
    pub format: String,
    pub encoder_checkpoint: String,
    pub encoder_hash: String,
    pub classifier: LogisticRegression,
    pub class_map: Vec<usize>,
}
