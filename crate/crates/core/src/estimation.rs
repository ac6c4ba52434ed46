//! Penalized log-likelihood, its analytic gradient, and the fitting loop.
//!
//! The objective is the data log-likelihood minus the elastic-net penalty
//!
//! ```text
//! λ11 Σ|β_li| + λ12 Σβ_li² + λ21 Σ|δ_mj| + λ22 Σδ_mj²
//! ```
//!
//! over non-intercept coefficients. Per observation with initial level `i` and
//! outcome `c`, writing `p_j = λ/D_j`, `w_j = K_ij γ_j / D_j` and `p_K = 1 − Σ p_j`:
//!
//! ```text
//! c < K:  ∂/∂a = 1 − p_c                 ∂/∂g_j = −w_c [j = c]
//! c = K:  ∂/∂a = −Σ_j p_j(1 − p_j)/p_K    ∂/∂g_j = p_j w_j / p_K
//! ```
//!
//! with `a = β_0i + β_i·x`, `g_j = δ_0j + δ_j·y`, and the chain rule giving
//! the coefficient derivatives.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::encode::Design;
use crate::error::{Error, Result};
use crate::model::{HyperParams, ModelParams, RowTerms};
use crate::optim::{gradient_ascent, AscentSettings, Objective};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: ModelParams,
    pub iterations: usize,
    /// Penalized log-likelihood after each accepted iteration (index 0 is the start).
    pub trace: Vec<f64>,
    pub converged: bool,
    /// `max |θ_t − θ_{t−1}|` of the last iteration.
    pub final_step_delta: f64,
}

impl FitReport {
    pub fn final_objective(&self) -> f64 {
        *self.trace.last().expect("trace starts with the initial value")
    }

    /// Iteration trace as `iteration,objective` CSV.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iteration,objective\n");
        for (t, v) in self.trace.iter().enumerate() {
            s.push_str(&format!("{t},{v}\n"));
        }
        s
    }
}

/// Elastic-net penalty on non-intercept coefficients.
pub fn penalty(params: &ModelParams, hp: &HyperParams) -> f64 {
    let mut p = 0.0;
    for row in params.beta.rows() {
        for b in row.iter().skip(1) {
            p += hp.lambda11 * b.abs() + hp.lambda12 * b * b;
        }
    }
    for row in params.delta.rows() {
        for d in row.iter().skip(1) {
            p += hp.lambda21 * d.abs() + hp.lambda22 * d * d;
        }
    }
    p
}

fn add_penalty_gradient(params: &ModelParams, hp: &HyperParams, grad: &mut [f64]) {
    let sign = |v: f64| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 };
    let lb = params.beta.ncols();
    for (idx, b) in params.beta.iter().enumerate() {
        if idx % lb != 0 {
            grad[idx] -= hp.lambda11 * sign(*b) + 2.0 * hp.lambda12 * b;
        }
    }
    let nb = params.beta.len();
    let ld = params.delta.ncols();
    for (idx, d) in params.delta.iter().enumerate() {
        if idx % ld != 0 {
            grad[nb + idx] -= hp.lambda21 * sign(*d) + 2.0 * hp.lambda22 * d;
        }
    }
}

fn check_inputs(params: &ModelParams, design: &Design) -> Result<()> {
    params.check_dims(design.k, design.n_cols(), design.x.ncols(), design.y.ncols())?;
    if params.mode != design.mode {
        return Err(Error::Dimension(format!(
            "parameters are in {:?} mode, data in {:?} mode",
            params.mode, design.mode
        )));
    }
    Ok(())
}

struct Partial {
    ll: f64,
    grad: Option<Vec<f64>>,
}

fn chunk_terms(
    params: &ModelParams,
    hp: &HyperParams,
    design: &Design,
    range: Range<usize>,
    with_grad: bool,
) -> Result<Partial> {
    let nj = params.delta.nrows();
    let lb = params.beta.ncols();
    let ld = params.delta.ncols();
    let nb = params.beta.len();
    let mut terms = RowTerms::with_capacity(nj);
    let mut ll = 0.0;
    let mut grad = with_grad.then(|| vec![0.0; params.n_free()]);
    let mut dg = vec![0.0; nj];
    for k in range {
        let i0 = design.rows[k];
        let c0 = design.cols[k];
        let x = design.x.row(k);
        let y = design.y.row(k);
        terms.fill(params, hp.alpha, hp.c_weight, i0, x, y);
        let last = terms.last;
        if last < 0.0 || (c0 == nj && last <= 0.0) {
            return Err(Error::InvalidProbability {
                observation: Some(k),
                last,
            });
        }
        ll += if c0 < nj { terms.p[c0].ln() } else { last.ln() };

        let Some(g) = grad.as_mut() else { continue };
        let mut da;
        if c0 < nj {
            da = 1.0 - terms.p[c0];
            dg.fill(0.0);
            dg[c0] = -terms.w[c0];
        } else {
            da = 0.0;
            for j in 0..nj {
                let p = terms.p[j];
                da -= p * (1.0 - p) / last;
                dg[j] = p * terms.w[j] / last;
            }
        }
        if terms.a_clamped {
            da = 0.0;
        }
        let off = i0 * lb;
        g[off] += da;
        for (l, xv) in x.iter().enumerate() {
            g[off + 1 + l] += da * xv;
        }
        for j in 0..nj {
            if terms.g_clamped[j] || dg[j] == 0.0 {
                continue;
            }
            let off = nb + j * ld;
            g[off] += dg[j];
            for (m, yv) in y.iter().enumerate() {
                g[off + 1 + m] += dg[j] * yv;
            }
        }
    }
    Ok(Partial { ll, grad })
}

fn evaluate(params: &ModelParams, hp: &HyperParams, design: &Design, with_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    let total = par::chunked_reduce(
        design.n_obs(),
        |r| chunk_terms(params, hp, design, r, with_grad),
        |a, b| {
            let (a, b) = (a?, b?);
            let grad = match (a.grad, b.grad) {
                (Some(mut x), Some(y)) => {
                    x.iter_mut().zip(&y).for_each(|(p, q)| *p += q);
                    Some(x)
                }
                _ => None,
            };
            Ok(Partial { ll: a.ll + b.ll, grad })
        },
    )
    .unwrap_or_else(|| {
        Ok(Partial {
            ll: 0.0,
            grad: with_grad.then(|| vec![0.0; params.n_free()]),
        })
    })?;
    let mut grad = total.grad;
    if let Some(g) = grad.as_mut() {
        add_penalty_gradient(params, hp, g);
    }
    Ok((total.ll - penalty(params, hp), grad))
}

/// Data log-likelihood without the penalty.
pub fn data_log_likelihood(params: &ModelParams, hp: &HyperParams, design: &Design) -> Result<f64> {
    check_inputs(params, design)?;
    Ok(evaluate(params, hp, design, false)?.0 + penalty(params, hp))
}

/// Penalized log-likelihood `l(θ)`.
pub fn log_likelihood(params: &ModelParams, hp: &HyperParams, design: &Design) -> Result<f64> {
    check_inputs(params, design)?;
    Ok(evaluate(params, hp, design, false)?.0)
}

/// Analytic gradient of [`log_likelihood`], shaped like the parameters. The
/// subgradient of `|·|` at zero is taken as zero.
pub fn gradient(params: &ModelParams, hp: &HyperParams, design: &Design) -> Result<ModelParams> {
    check_inputs(params, design)?;
    let (_, g) = evaluate(params, hp, design, true)?;
    Ok(params.from_flat(&g.expect("gradient requested")))
}

struct PenalizedLikelihood<'a> {
    template: &'a ModelParams,
    hp: &'a HyperParams,
    design: &'a Design,
}

impl Objective for PenalizedLikelihood<'_> {
    fn dim(&self) -> usize {
        self.template.n_free()
    }

    fn value(&self, theta: &[f64]) -> Option<f64> {
        let p = self.template.from_flat(theta);
        evaluate(&p, self.hp, self.design, false).ok().map(|(v, _)| v)
    }

    fn value_and_gradient(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        let p = self.template.from_flat(theta);
        evaluate(&p, self.hp, self.design, true)
            .ok()
            .map(|(v, g)| (v, g.expect("gradient requested")))
    }
}

/// Starting point: all-zero coefficients, with row intercepts lowered in
/// steps of 0.5 when zero coefficients give an invalid probability vector
/// (possible for K ≥ 4 with small `C`).
pub fn default_init(hp: &HyperParams, design: &Design) -> ModelParams {
    let mut p = ModelParams::zeros(design.k, design.x.ncols(), design.y.ncols(), design.mode);
    for _ in 0..60 {
        if evaluate(&p, hp, design, false).is_ok() {
            break;
        }
        p.beta.column_mut(0).mapv_inplace(|b| b - 0.5);
    }
    p
}

/// Fit by gradient ascent on the penalized log-likelihood.
///
/// Stopping at `max_iter` yields `converged = false`; a non-finite objective
/// at the starting point is an error.
pub fn fit(design: &Design, hp: &HyperParams, init: Option<ModelParams>) -> Result<FitReport> {
    hp.validate()?;
    if design.n_obs() < design.k {
        return Err(Error::InvalidArgument(format!(
            "need at least K={} observations, got {}",
            design.k,
            design.n_obs()
        )));
    }
    let init = match init {
        Some(p) => {
            check_inputs(&p, design)?;
            p
        }
        None => default_init(hp, design),
    };
    let obj = PenalizedLikelihood {
        template: &init,
        hp,
        design,
    };
    let settings = AscentSettings {
        eta: hp.eta,
        tol: hp.tol,
        max_iter: hp.max_iter,
        max_halvings: 20,
    };
    let out = gradient_ascent(&obj, init.to_flat(), &settings).map_err(|e| match e {
        Error::Divergence(msg) => Error::Divergence(format!("{msg}; the starting parameters give an invalid probability vector")),
        other => other,
    })?;
    Ok(FitReport {
        params: init.from_flat(&out.theta),
        iterations: out.iterations,
        trace: out.trace,
        converged: out.converged,
        final_step_delta: out.final_step_delta,
    })
}
