//! Multinomial logistic regression with an L2 penalty, fitted by the shared
//! gradient-ascent routine. Used by the baseline predictors.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::optim::{gradient_ascent, AscentSettings, Objective};
use crate::par;

/// Softmax classifier over an arbitrary sorted label set. A single observed
/// label gives a constant classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multinomial {
    pub classes: Vec<i64>,
    /// One row per class: intercept followed by feature weights.
    pub weights: Array2<f64>,
    pub converged: bool,
}

struct Likelihood<'a> {
    features: &'a Array2<f64>,
    labels: &'a [usize],
    n_classes: usize,
    l2: f64,
}

impl Likelihood<'_> {
    fn width(&self) -> usize {
        self.features.ncols() + 1
    }

    fn evaluate(&self, theta: &[f64], with_grad: bool) -> Option<(f64, Vec<f64>)> {
        let w = self.width();
        let nc = self.n_classes;
        let total = par::chunked_reduce(
            self.labels.len(),
            |range| {
                let mut ll = 0.0;
                let mut grad = if with_grad { vec![0.0; theta.len()] } else { Vec::new() };
                let mut scores = vec![0.0; nc];
                for k in range {
                    let x = self.features.row(k);
                    for (c, s) in scores.iter_mut().enumerate() {
                        *s = linear(&theta[c * w..(c + 1) * w], x);
                    }
                    let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let norm: f64 = scores.iter().map(|s| (s - top).exp()).sum();
                    let log_norm = top + norm.ln();
                    ll += scores[self.labels[k]] - log_norm;
                    if with_grad {
                        for c in 0..nc {
                            let resid = f64::from(u8::from(c == self.labels[k])) - (scores[c] - log_norm).exp();
                            let g = &mut grad[c * w..(c + 1) * w];
                            g[0] += resid;
                            for (gv, xv) in g[1..].iter_mut().zip(x.iter()) {
                                *gv += resid * xv;
                            }
                        }
                    }
                }
                (ll, grad)
            },
            |(a, mut ga), (b, gb)| {
                ga.iter_mut().zip(&gb).for_each(|(p, q)| *p += q);
                (a + b, ga)
            },
        )
        .unwrap_or((0.0, vec![0.0; if with_grad { theta.len() } else { 0 }]));
        let (mut ll, mut grad) = total;
        for (idx, t) in theta.iter().enumerate() {
            if idx % w != 0 {
                ll -= self.l2 * t * t;
                if with_grad {
                    grad[idx] -= 2.0 * self.l2 * t;
                }
            }
        }
        ll.is_finite().then_some((ll, grad))
    }
}

fn linear(coefs: &[f64], x: ArrayView1<f64>) -> f64 {
    coefs[0] + coefs[1..].iter().zip(x.iter()).map(|(c, v)| c * v).sum::<f64>()
}

impl Objective for Likelihood<'_> {
    fn dim(&self) -> usize {
        self.n_classes * self.width()
    }
    fn value(&self, theta: &[f64]) -> Option<f64> {
        self.evaluate(theta, false).map(|(v, _)| v)
    }
    fn value_and_gradient(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.evaluate(theta, true)
    }
}

impl Multinomial {
    /// Fit on rows of `features` with integer `labels`.
    pub fn fit(features: &Array2<f64>, labels: &[i64], l2: f64, settings: &AscentSettings) -> Result<Self> {
        let mut classes = labels.to_vec();
        classes.sort_unstable();
        classes.dedup();
        let width = features.ncols() + 1;
        if classes.len() < 2 {
            return Ok(Multinomial {
                classes,
                weights: Array2::zeros((1, width)),
                converged: true,
            });
        }
        let idx: Vec<usize> = labels.iter().map(|l| classes.binary_search(l).unwrap()).collect();
        let obj = Likelihood {
            features,
            labels: &idx,
            n_classes: classes.len(),
            l2,
        };
        let out = gradient_ascent(&obj, vec![0.0; obj.dim()], settings)?;
        Ok(Multinomial {
            weights: Array2::from_shape_vec((classes.len(), width), out.theta).expect("shape matches"),
            classes,
            converged: out.converged,
        })
    }

    /// Most probable label; ties go to the first class in sorted order.
    pub fn predict(&self, x: ArrayView1<f64>) -> i64 {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (c, row) in self.weights.rows().into_iter().enumerate() {
            let s = linear(row.as_slice().expect("row-major weights"), x);
            if s > best_score {
                best = c;
                best_score = s;
            }
        }
        self.classes[best]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn separable_two_class_toy() {
        let x = array![[-2.0], [-1.5], [-1.0], [-0.5], [0.5], [1.0], [1.5], [2.0]];
        let y = [-1, -1, -1, -1, 0, 0, 0, 0];
        let m = Multinomial::fit(&x, &y, 0.01, &AscentSettings::default()).unwrap();
        assert!(m.converged);
        for (r, label) in y.iter().enumerate() {
            assert_eq!(m.predict(x.row(r)), *label);
        }
    }

    #[test]
    fn single_class_is_constant() {
        let x = array![[1.0], [2.0]];
        let m = Multinomial::fit(&x, &[3, 3], 0.01, &AscentSettings::default()).unwrap();
        assert_eq!(m.predict(x.row(0)), 3);
        assert_eq!(m.predict(array![100.0].view()), 3);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = array![[0.3, -1.0], [1.2, 0.4], [-0.7, 0.9], [0.1, 0.1], [2.0, -0.3]];
        let labels = [0, 2, 1, 2, 0];
        let obj = Likelihood {
            features: &x,
            labels: &labels,
            n_classes: 3,
            l2: 0.05,
        };
        let theta: Vec<f64> = (0..obj.dim()).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
        let (_, g) = obj.value_and_gradient(&theta).unwrap();
        let h = 1e-6;
        for i in 0..theta.len() {
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (obj.value(&up).unwrap() - obj.value(&dn).unwrap()) / (2.0 * h);
            assert_relative_eq!(g[i], fd, epsilon = 1e-7, max_relative = 1e-6);
        }
    }
}
