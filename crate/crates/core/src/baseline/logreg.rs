//! Multinomial logistic regression with an L2 penalty, solved by damped
//! Newton iterations.
//!
//! Objective: `C · Σ_i −log softmax(W·x_i + b)[y_i] + ½‖W‖²` (the intercept
//! is not penalized).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::{log_sum_exp, softmax};
use crate::nn::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRegConfig {
    /// Inverse regularization strength.
    pub c: f64,
    /// Stop once the largest gradient component falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    /// `n_classes × dim`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

struct Problem<'a> {
    x: &'a Matrix,
    y: &'a [usize],
    n_classes: usize,
    c: f64,
}

impl Problem<'_> {
    fn dim(&self) -> usize {
        self.x.cols
    }

    fn n_params(&self) -> usize {
        self.n_classes * (self.dim() + 1)
    }

    fn idx(&self, class: usize, j: usize) -> usize {
        let d = self.dim();
        if j < d {
            class * d + j
        } else {
            self.n_classes * d + class
        }
    }

    fn logits(&self, theta: &[f64], row: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..self.n_classes)
            .map(|k| {
                theta[k * d..(k + 1) * d].iter().zip(row).map(|(w, x)| w * x).sum::<f64>()
                    + theta[self.n_classes * d + k]
            })
            .collect()
    }

    fn objective(&self, theta: &[f64]) -> f64 {
        let d = self.dim();
        let mut nll = 0.0;
        for (row, &y) in self.x.iter_rows().zip(self.y) {
            let z = self.logits(theta, row);
            nll += log_sum_exp(&z) - z[y];
        }
        let reg: f64 = theta[..self.n_classes * d].iter().map(|w| w * w).sum();
        self.c * nll + 0.5 * reg
    }

    fn gradient_hessian(&self, theta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dim();
        let p = self.n_params();
        let mut g = DVector::zeros(p);
        let mut h = DMatrix::zeros(p, p);
        let mut xt = vec![1.0; d + 1];
        for (row, &y) in self.x.iter_rows().zip(self.y) {
            xt[..d].copy_from_slice(row);
            let probs = softmax(&self.logits(theta, row));
            for k in 0..self.n_classes {
                let r = probs[k] - if k == y { 1.0 } else { 0.0 };
                for (j, &xv) in xt.iter().enumerate() {
                    g[self.idx(k, j)] += self.c * r * xv;
                }
            }
            for k in 0..self.n_classes {
                for m in 0..self.n_classes {
                    let a = self.c * (if k == m { probs[k] } else { 0.0 } - probs[k] * probs[m]);
                    if a == 0.0 {
                        continue;
                    }
                    for (j, &xj) in xt.iter().enumerate() {
                        let row_idx = self.idx(k, j);
                        let axj = a * xj;
                        for (l, &xl) in xt.iter().enumerate() {
                            h[(row_idx, self.idx(m, l))] += axj * xl;
                        }
                    }
                }
            }
        }
        for i in 0..self.n_classes * d {
            g[i] += theta[i];
            h[(i, i)] += 1.0;
        }
        (g, h)
    }
}

impl LogisticRegression {
    pub fn fit(features: &Matrix, labels: &[usize], n_classes: usize, config: &LogRegConfig) -> Result<Self> {
        if features.rows == 0 || features.rows != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                features.rows,
                labels.len()
            )));
        }
        if n_classes < 2 {
            return Err(Error::invalid("logistic regression needs at least two classes"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::invalid(format!("label {bad} outside 0..{n_classes}")));
        }
        if !(config.c > 0.0) {
            return Err(Error::invalid("C must be positive"));
        }
        let problem = Problem {
            x: features,
            y: labels,
            n_classes,
            c: config.c,
        };
        let p = problem.n_params();
        let mut theta = vec![0.0; p];
        let mut f = problem.objective(&theta);
        let mut converged = false;
        let mut iterations = 0;
        while iterations < config.max_iter {
            let (g, mut h) = problem.gradient_hessian(&theta);
            if g.amax() < config.tol {
                converged = true;
                break;
            }
            iterations += 1;
            // The intercepts share one flat direction (adding a constant to
            // all of them); a tiny ridge keeps the system positive definite.
            for i in 0..p {
                h[(i, i)] += 1e-10;
            }
            let step = match h.clone().cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => h.lu().solve(&(-&g)).ok_or_else(|| Error::invalid("singular Newton system"))?,
            };
            let slope = g.dot(&step);
            let mut t = 1.0;
            let mut accepted = false;
            while t > 1e-12 {
                let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
                let fc = problem.objective(&cand);
                if fc <= f + 1e-4 * t * slope {
                    theta = cand;
                    f = fc;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                // No further decrease is representable.
                converged = g.amax() < config.tol.sqrt();
                break;
            }
        }
        let d = features.cols;
        let mut bias = theta[n_classes * d..].to_vec();
        let mean = bias.iter().sum::<f64>() / n_classes as f64;
        for b in &mut bias {
            *b -= mean;
        }
        Ok(Self {
            weights: Matrix::from_vec(n_classes, d, theta[..n_classes * d].to_vec()),
            bias,
            iterations,
            converged,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.weights.rows
    }

    pub fn n_params(&self) -> usize {
        self.weights.data.len() + self.bias.len()
    }

    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols != self.weights.cols {
            return Err(Error::shape(format!(
                "features have {} columns, classifier expects {}",
                features.cols, self.weights.cols
            )));
        }
        let n = self.n_classes();
        let mut out = Matrix::zeros(features.rows, n);
        for (i, row) in features.iter_rows().enumerate() {
            for k in 0..n {
                out.data[i * n + k] = self.weights.row(k).iter().zip(row).map(|(w, x)| w * x).sum::<f64>() + self.bias[k];
            }
        }
        Ok(out)
    }

    pub fn predict_proba(&self, features: &Matrix) -> Result<Matrix> {
        let mut z = self.logits(features)?;
        let n = z.cols;
        for row in z.data.chunks_exact_mut(n) {
            let p = softmax(row);
            row.copy_from_slice(&p);
        }
        Ok(z)
    }

    pub fn predict(&self, features: &Matrix) -> Result<Vec<usize>> {
        Ok(self.predict_proba(features)?.argmax_rows())
    }

    /// Sum of log-probabilities of the true labels.
    pub fn log_likelihood(&self, features: &Matrix, labels: &[usize]) -> Result<f64> {
        let z = self.logits(features)?;
        Ok(z.iter_rows().zip(labels).map(|(row, &y)| row[y] - log_sum_exp(row)).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Features on distinct axes per class, with a little spread.
    fn separable(n_classes: usize, per: usize, dim: usize) -> (Matrix, Vec<usize>) {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..n_classes {
            for i in 0..per {
                let mut v = vec![0.0; dim];
                v[c] = 1.0;
                v[(c + 1) % dim] = 0.1 * i as f64;
                let n = v.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
                rows.push(v.into_iter().map(|x| x / n).collect());
                labels.push(c);
            }
        }
        (Matrix::from_rows(&rows), labels)
    }

    #[test]
    fn separable_support_is_fit_perfectly() {
        let (x, y) = separable(3, 5, 8);
        let lr = LogisticRegression::fit(&x, &y, 3, &LogRegConfig::default()).unwrap();
        assert!(lr.converged);
        assert_eq!(lr.predict(&x).unwrap(), y);
    }

    #[test]
    fn parameter_count_for_three_way_one_shot() {
        let (x, y) = separable(3, 1, 6);
        let lr = LogisticRegression::fit(&x, &y, 3, &LogRegConfig::default()).unwrap();
        assert_eq!(lr.n_params(), 3 * (6 + 1));
    }

    #[test]
    fn gradient_vanishes_at_solution() {
        let (x, y) = separable(3, 4, 5);
        let cfg = LogRegConfig::default();
        let lr = LogisticRegression::fit(&x, &y, 3, &cfg).unwrap();
        let problem = Problem { x: &x, y: &y, n_classes: 3, c: cfg.c };
        let mut theta = lr.weights.data.clone();
        theta.extend(&lr.bias);
        let (g, _) = problem.gradient_hessian(&theta);
        assert!(g.amax() < 1e-7, "{}", g.amax());
    }

    #[test]
    fn duplicate_rows_across_classes_still_fit() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        let lr = LogisticRegression::fit(&x, &[0, 1, 2], 3, &LogRegConfig::default()).unwrap();
        assert!(lr.converged);
        let p = lr.predict_proba(&x).unwrap();
        assert!((p.get(0, 0) - p.get(0, 1)).abs() < 1e-9);
    }

    #[test]
    fn stronger_penalty_never_raises_likelihood() {
        let x = Matrix::from_rows(&[
            vec![0.9, 0.1, 0.4],
            vec![0.2, 0.8, 0.1],
            vec![0.3, 0.3, 0.9],
            vec![0.7, 0.6, 0.2],
            vec![0.1, 0.2, 0.5],
            vec![0.6, 0.1, 0.1],
        ]);
        let y = [0, 1, 2, 1, 2, 0];
        let mut prev = f64::INFINITY;
        // Penalty 1/C doubles at every step.
        for i in 0..10 {
            let c = 64.0 / 2f64.powi(i);
            let lr = LogisticRegression::fit(&x, &y, 3, &LogRegConfig { c, ..Default::default() }).unwrap();
            let ll = lr.log_likelihood(&x, &y).unwrap();
            assert!(ll <= prev + 1e-9, "C = {c}: {ll} > {prev}");
            prev = ll;
        }
    }

    #[test]
    fn two_class_probability_is_sigmoid() {
        let lr = LogisticRegression {
            weights: Matrix::from_rows(&[vec![0.5, -1.0], vec![-0.25, 0.75]]),
            bias: vec![0.1, -0.1],
            iterations: 0,
            converged: true,
        };
        let f = Matrix::from_rows(&[vec![0.6, 0.8]]);
        let p = lr.predict_proba(&f).unwrap();
        // z0 − z1 = (0.3 − 0.8 + 0.1) − (−0.15 + 0.6 − 0.1) = −0.75
        let expected = 1.0 / (1.0 + 0.75f64.exp());
        assert!((p.get(0, 0) - expected).abs() < 1e-12);
    }
}
