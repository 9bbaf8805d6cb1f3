//! Accuracy, confusion matrices and macro-averaged F1. Labels are 0-based.

use crate::error::{Error, Result};

fn check_pair(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::invalid("no predictions to score"));
    }
    if pred.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_pair(pred, truth)?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// `confusion[true][pred]` counts.
pub fn confusion_matrix(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<Vec<Vec<u64>>> {
    check_pair(pred, truth)?;
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= n_classes || t >= n_classes {
            return Err(Error::invalid(format!("label outside 0..{n_classes}")));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Per-class F1 as the fraction `2·tp / (predicted + actual)`; a class with
/// no true and no predicted samples is `0/1`.
fn f1_fractions(confusion: &[Vec<u64>]) -> Vec<(u64, u64)> {
    let n = confusion.len();
    (0..n)
        .map(|c| {
            let predicted: u64 = (0..n).map(|t| confusion[t][c]).sum();
            let actual: u64 = confusion[c].iter().sum();
            match predicted + actual {
                0 => (0, 1),
                d => (2 * confusion[c][c], d),
            }
        })
        .collect()
}

/// Per-class F1 from a confusion matrix; a class with no true and no
/// predicted samples scores 0.
pub fn f1_from_confusion(confusion: &[Vec<u64>]) -> Vec<f64> {
    f1_fractions(confusion).into_iter().map(|(a, b)| a as f64 / b as f64).collect()
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Mean of fractions, summed exactly and rounded once. `None` when the
/// exact sum does not fit.
fn exact_mean(fractions: &[(u64, u64)]) -> Option<f64> {
    const EXACT: u128 = 1 << 53;
    let (mut num, mut den) = (0u128, 1u128);
    for &(a, b) in fractions {
        let (a, b) = (a as u128, b as u128);
        let g = gcd(den, b);
        let lcm = den.checked_mul(b / g)?;
        num = num.checked_mul(lcm / den)?.checked_add(a.checked_mul(lcm / b)?)?;
        den = lcm;
        let g = gcd(num, den).max(1);
        (num, den) = (num / g, den / g);
    }
    let den = den.checked_mul(fractions.len() as u128)?;
    let g = gcd(num, den).max(1);
    let (num, den) = (num / g, den / g);
    (num < EXACT && den < EXACT).then(|| num as f64 / den as f64)
}

/// Macro-averaged F1 and the per-class scores.
pub fn macro_f1(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<(f64, Vec<f64>)> {
    if n_classes < 2 {
        return Err(Error::invalid("F1 needs at least two classes"));
    }
    let fractions = f1_fractions(&confusion_matrix(pred, truth, n_classes)?);
    let per_class: Vec<f64> = fractions.iter().map(|&(a, b)| a as f64 / b as f64).collect();
    let mean = exact_mean(&fractions).unwrap_or_else(|| per_class.iter().sum::<f64>() / n_classes as f64);
    Ok((mean, per_class))
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert!((accuracy(&[0, 1, 2], &[0, 1, 0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(accuracy(&[1, 1], &[0, 0]).unwrap(), 0.0);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn worked_macro_f1() {
        let (f1, per) = macro_f1(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(per, vec![2.0 / 3.0, 0.8]);
        assert_eq!(f1, 11.0 / 15.0);
    }

    #[test]
    fn absent_class_scores_zero() {
        let (f1, per) = macro_f1(&[0, 1], &[0, 1], 3).unwrap();
        assert_eq!(per, vec![1.0, 1.0, 0.0]);
        assert_eq!(f1, 2.0 / 3.0);
        assert!(macro_f1(&[0], &[0], 1).is_err());
    }

    #[test]
    fn exact_mean_rounds_once() {
        assert_eq!(exact_mean(&[(1, 3), (1, 3), (1, 3)]), Some(1.0 / 3.0));
        assert_eq!(exact_mean(&[(0, 1), (2, 2)]), Some(0.5));
        assert_eq!(exact_mean(&[(1, u64::MAX), (1, u64::MAX - 1)]), None);
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[0.6, 0.7, 0.8]);
        assert!((m - 0.7).abs() < 1e-12);
        assert!((s - (0.02f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[0.5, 0.5, 0.5]).1, 0.0);
    }

    proptest! {
        #[test]
        fn joint_permutation_invariance(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..40),
            rot in 0usize..40,
        ) {
            let (p, t): (Vec<usize>, Vec<usize>) = pairs.iter().cloned().unzip();
            let mut rotated = pairs.clone();
            let r = rot % rotated.len();
            rotated.rotate_left(r);
            let (p2, t2): (Vec<usize>, Vec<usize>) = rotated.into_iter().unzip();
            prop_assert_eq!(accuracy(&p, &t).unwrap(), accuracy(&p2, &t2).unwrap());
            prop_assert_eq!(macro_f1(&p, &t, 4).unwrap(), macro_f1(&p2, &t2, 4).unwrap());
        }
    }
}
