//! Pseudo-label classification, embedding regression and the hybrid sum.

use serde::{Deserialize, Serialize};

use super::labels::LabelDesign;
use crate::error::{Error, Result};
use crate::nn::softmax;

/// Floor applied to probabilities inside logarithms.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    ClsOnly,
    ConPlusCls,
    ConPlusReg,
}

impl LossVariant {
    pub const ALL: [LossVariant; 3] = [Self::ClsOnly, Self::ConPlusCls, Self::ConPlusReg];

    pub fn uses_contrastive(self) -> bool {
        !matches!(self, Self::ClsOnly)
    }

    pub fn uses_classification(self) -> bool {
        !matches!(self, Self::ConPlusReg)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::ClsOnly => "cls_only",
            Self::ConPlusCls => "con_plus_cls",
            Self::ConPlusReg => "con_plus_reg",
        }
    }
}

impl std::fmt::Display for LossVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown loss variant `{s}`")))
    }
}

/// Cross-entropy for hard-type designs, KL(y ‖ p) for soft-type designs.
pub fn classification_loss(y: &[f64], p: &[f64], design: LabelDesign) -> Result<f64> {
    if y.len() != p.len() {
        return Err(Error::shape(format!("label has {} classes, prediction {}", y.len(), p.len())));
    }
    let cross: f64 = y
        .iter()
        .zip(p)
        .filter(|(&yn, _)| yn > 0.0)
        .map(|(&yn, &pn)| -yn * pn.max(PROB_EPS).ln())
        .sum();
    if design.is_hard() {
        Ok(cross)
    } else {
        let neg_entropy: f64 = y.iter().filter(|&&yn| yn > 0.0).map(|&yn| yn * yn.ln()).sum();
        Ok(cross + neg_entropy)
    }
}

/// Loss and its gradient with respect to the logits feeding the softmax.
/// Both designs share the gradient `p − y` for a normalized target.
pub fn classification_loss_logits(y: &[f64], logits: &[f64], design: LabelDesign) -> Result<(f64, Vec<f64>)> {
    let p = softmax(logits);
    let loss = classification_loss(y, &p, design)?;
    let y_sum: f64 = y.iter().sum();
    let grad = p.iter().zip(y).map(|(&pn, &yn)| y_sum * pn - yn).collect();
    Ok((loss, grad))
}

/// Mean absolute difference between two embeddings.
pub fn regression_loss(teacher: &[f64], student: &[f64]) -> Result<f64> {
    if teacher.len() != student.len() || teacher.is_empty() {
        return Err(Error::shape(format!(
            "embedding sizes differ: {} vs {}",
            teacher.len(),
            student.len()
        )));
    }
    Ok(teacher.iter().zip(student).map(|(a, b)| (a - b).abs()).sum::<f64>() / teacher.len() as f64)
}

/// Subgradient of [`regression_loss`] with respect to the student embedding.
pub fn regression_grad(teacher: &[f64], student: &[f64]) -> Vec<f64> {
    let d = teacher.len() as f64;
    teacher
        .iter()
        .zip(student)
        .map(|(&t, &s)| match s.partial_cmp(&t) {
            Some(std::cmp::Ordering::Greater) => 1.0 / d,
            Some(std::cmp::Ordering::Less) => -1.0 / d,
            _ => 0.0,
        })
        .collect()
}

/// Unweighted sum of the contrastive term and the second term. The
/// contrastive term is dropped for the classification-only variant.
pub fn hybrid_loss(variant: LossVariant, con: f64, second: f64) -> Result<f64> {
    if !second.is_finite() || (variant.uses_contrastive() && !con.is_finite()) {
        return Err(Error::invalid(format!("non-finite loss term (con {con}, second {second})")));
    }
    Ok(if variant.uses_contrastive() { con + second } else { second })
}
