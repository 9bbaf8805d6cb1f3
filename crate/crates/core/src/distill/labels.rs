//! Pseudo-label designs and the adaptive combination schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{argmax, Matrix};

const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelDesign {
    Hard,
    Soft,
    AdaptiveHard,
    AdaptiveSoft,
}

impl LabelDesign {
    pub const ALL: [LabelDesign; 4] = [Self::Hard, Self::Soft, Self::AdaptiveHard, Self::AdaptiveSoft];

    pub fn is_adaptive(self) -> bool {
        matches!(self, Self::AdaptiveHard | Self::AdaptiveSoft)
    }

    /// Hard-type targets are scored with cross-entropy, soft-type with KL.
    pub fn is_hard(self) -> bool {
        matches!(self, Self::Hard | Self::AdaptiveHard)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Hard => "hard",
            Self::Soft => "soft",
            Self::AdaptiveHard => "adaptive_hard",
            Self::AdaptiveSoft => "adaptive_soft",
        }
    }
}

impl std::fmt::Display for LabelDesign {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LabelDesign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown label design `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub vector: Vec<f64>,
    pub design: LabelDesign,
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::invalid(format!("{what} is empty")));
    }
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid(format!("{what} has negative or non-finite entries")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::invalid(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

/// Turns teacher probabilities into targets. Hard designs take the one-hot
/// argmax (lowest index wins ties), soft designs copy the row.
pub fn make_pseudo_labels(probs: &Matrix, design: LabelDesign) -> Result<Vec<PseudoLabel>> {
    probs
        .iter_rows()
        .enumerate()
        .map(|(i, row)| {
            check_distribution(row, &format!("probability row {i}"))?;
            let vector = if design.is_hard() {
                let mut v = vec![0.0; row.len()];
                v[argmax(row)] = 1.0;
                v
            } else {
                row.to_vec()
            };
            Ok(PseudoLabel { vector, design })
        })
        .collect()
}

/// `(1 − α)·y + α·p`.
pub fn adapt_labels(y: &PseudoLabel, p_student: &[f64], alpha: f64) -> Result<PseudoLabel> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    if y.vector.len() != p_student.len() {
        return Err(Error::shape(format!(
            "label has {} classes, prediction has {}",
            y.vector.len(),
            p_student.len()
        )));
    }
    check_distribution(&y.vector, "pseudo label")?;
    check_distribution(p_student, "student prediction")?;
    let vector = if alpha == 0.0 {
        y.vector.clone()
    } else if alpha == 1.0 {
        p_student.to_vec()
    } else {
        y.vector
            .iter()
            .zip(p_student)
            .map(|(&a, &b)| (1.0 - alpha) * a + alpha * b)
            .collect()
    };
    Ok(PseudoLabel { vector, design: y.design })
}

/// Linear growth `α_T · t / T`, reaching `α_T` at the last epoch.
pub fn alpha_schedule(t: usize, total: usize, alpha_final: f64) -> f64 {
    if total == 0 {
        return alpha_final;
    }
    let t = t.min(total);
    if t == total {
        alpha_final
    } else {
        alpha_final * t as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(v: &[f64]) -> Matrix {
        Matrix::from_rows(&[v.to_vec()])
    }

    #[test]
    fn hard_and_soft_designs() {
        let hard = make_pseudo_labels(&p(&[0.2, 0.5, 0.3]), LabelDesign::Hard).unwrap();
        assert_eq!(hard[0].vector, vec![0.0, 1.0, 0.0]);
        let soft = make_pseudo_labels(&p(&[0.2, 0.5, 0.3]), LabelDesign::Soft).unwrap();
        assert_eq!(soft[0].vector, vec![0.2, 0.5, 0.3]);
        let tie = make_pseudo_labels(&p(&[0.4, 0.4, 0.2]), LabelDesign::AdaptiveHard).unwrap();
        assert_eq!(tie[0].vector, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_unnormalized_rows() {
        assert!(make_pseudo_labels(&p(&[0.2, 0.5, 0.4]), LabelDesign::Soft).is_err());
        assert!(make_pseudo_labels(&p(&[-0.1, 0.6, 0.5]), LabelDesign::Hard).is_err());
    }

    #[test]
    fn adaptive_worked_example() {
        let y = PseudoLabel { vector: vec![1.0, 0.0, 0.0], design: LabelDesign::AdaptiveHard };
        let out = adapt_labels(&y, &[0.5, 0.3, 0.2], 0.7).unwrap();
        for (a, b) in out.vector.iter().zip([0.65, 0.21, 0.14]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(adapt_labels(&y, &[0.5, 0.3, 0.2], 0.0).unwrap().vector, y.vector);
        assert_eq!(adapt_labels(&y, &[0.5, 0.3, 0.2], 1.0).unwrap().vector, vec![0.5, 0.3, 0.2]);
        assert!(adapt_labels(&y, &[0.5, 0.3, 0.2], 1.5).is_err());
    }

    #[test]
    fn schedule_values() {
        assert_eq!(alpha_schedule(0, 20, 0.7), 0.0);
        assert_eq!(alpha_schedule(20, 20, 0.7), 0.7);
        assert!((alpha_schedule(10, 20, 0.7) - 0.35).abs() < 1e-15);
    }

    #[test]
    fn design_names_round_trip() {
        for d in LabelDesign::ALL {
            assert_eq!(d.name().parse::<LabelDesign>().unwrap(), d);
            assert_eq!(serde_json::to_string(&d).unwrap(), format!("\"{}\"", d.name()));
        }
    }

    fn prob_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, n).prop_map(|v| {
            let v: Vec<f64> = v.into_iter().map(|x| x + 1e-3).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn hard_labels_ignore_monotone_transforms(p in prob_vec(5), power in 0.2f64..5.0) {
            let transformed: Vec<f64> = p.iter().map(|v| v.powf(power)).collect();
            let s: f64 = transformed.iter().sum();
            let transformed: Vec<f64> = transformed.iter().map(|v| v / s).collect();
            let a = make_pseudo_labels(&Matrix::from_rows(&[p]), LabelDesign::Hard).unwrap();
            let b = make_pseudo_labels(&Matrix::from_rows(&[transformed]), LabelDesign::Hard).unwrap();
            prop_assert_eq!(&a[0].vector, &b[0].vector);
        }

        #[test]
        fn schedule_is_monotone(total in 1usize..300, a in 0.0f64..=1.0) {
            for t in 0..total {
                prop_assert!(alpha_schedule(t, total, a) <= alpha_schedule(t + 1, total, a));
            }
        }
    }
}
