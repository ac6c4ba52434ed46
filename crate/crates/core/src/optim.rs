//! Gradient ascent with backtracking, shared by the transition model and the
//! logistic baselines.
//!
//! Each iteration tries `θ + s ∇f(θ)`. The trial step starts at
//! `min(eta, 2 s_prev)` and is halved (at most `max_halvings` times) while the
//! objective decreases or leaves its valid domain. Iteration stops once the
//! accepted update satisfies `max |θ_t − θ_{t−1}| < tol`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait Objective: Sync {
    fn dim(&self) -> usize;

    /// Objective value, or `None` outside the valid domain.
    fn value(&self, theta: &[f64]) -> Option<f64>;

    fn value_and_gradient(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AscentSettings {
    pub eta: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: u32,
}

impl Default for AscentSettings {
    fn default() -> Self {
        AscentSettings {
            eta: 0.01,
            tol: 1e-4,
            max_iter: 10_000,
            max_halvings: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentOutcome {
    pub theta: Vec<f64>,
    pub iterations: usize,
    /// Objective after each accepted iteration, starting with the initial value.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub final_step_delta: f64,
}

pub fn gradient_ascent<O: Objective + ?Sized>(
    obj: &O,
    init: Vec<f64>,
    settings: &AscentSettings,
) -> Result<AscentOutcome> {
    if init.len() != obj.dim() {
        return Err(Error::Dimension(format!(
            "initial point has {} entries, objective has {}",
            init.len(),
            obj.dim()
        )));
    }
    let (mut f, mut grad) = obj
        .value_and_gradient(&init)
        .filter(|(v, g)| v.is_finite() && g.iter().all(|x| x.is_finite()))
        .ok_or_else(|| Error::Divergence("objective is not finite at the initial point".into()))?;
    let mut theta = init;
    let mut trace = vec![f];
    let mut step = settings.eta;
    let mut trial = vec![0.0; theta.len()];
    let mut iterations = 0;
    let mut converged = false;
    let mut final_step_delta = f64::INFINITY;

    while iterations < settings.max_iter {
        iterations += 1;
        let mut s = (2.0 * step).min(settings.eta);
        let mut accepted = None;
        for _ in 0..=settings.max_halvings {
            for ((t, th), g) in trial.iter_mut().zip(&theta).zip(&grad) {
                *t = th + s * g;
            }
            match obj.value(&trial) {
                Some(v) if v.is_finite() && v >= f => {
                    accepted = Some(v);
                    break;
                }
                _ => s *= 0.5,
            }
        }
        let Some(v) = accepted else {
            // No ascent direction at working precision: θ_t = θ_{t−1}.
            final_step_delta = 0.0;
            converged = true;
            break;
        };
        step = s;
        final_step_delta = trial
            .iter()
            .zip(&theta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut theta, &mut trial);
        let (nv, ng) = obj
            .value_and_gradient(&theta)
            .ok_or_else(|| Error::Divergence("gradient undefined at an accepted point".into()))?;
        debug_assert!((nv - v).abs() <= 1e-9 * v.abs().max(1.0));
        f = nv;
        grad = ng;
        trace.push(f);
        if final_step_delta < settings.tol {
            converged = true;
            break;
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence("non-finite gradient".into()));
        }
    }

    Ok(AscentOutcome {
        theta,
        iterations,
        trace,
        converged,
        final_step_delta,
    })
}
