//! Transition-probability form.
//!
//! For an observation with initial level `i`, features `x` (pre-transition)
//! and `y` (transition period):
//!
//! ```text
//! row effect     λ_i(x) = exp(β_0i + Σ_l β_li x_l)
//! column effect  γ_j(y) = exp(δ_0j + Σ_m δ_mj y_m)
//! weight         K_ij   = C ((j - i)² + 1)
//! p(i → j)       = λ_i / (α + λ_i + K_ij γ_j)      for j < K
//! p(i → K)       = 1 - Σ_{j<K} p(i → j)
//! ```
//!
//! In delta mode the outcome columns are Δ ∈ {−1, 0, +1} and the distance
//! `j - i` is replaced by Δ.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::{ContingencyTable, TableMode};
use crate::error::{Error, Result};

/// Affine forms are clamped to `[-EXPONENT_CLAMP, EXPONENT_CLAMP]` before `exp`.
pub const EXPONENT_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub alpha: f64,
    /// Off-diagonal weight `C` in `K_ij`.
    pub c_weight: f64,
    pub lambda11: f64,
    pub lambda12: f64,
    pub lambda21: f64,
    pub lambda22: f64,
    /// Gradient-ascent step size.
    pub eta: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            alpha: 0.001,
            c_weight: 1.0,
            lambda11: 0.001,
            lambda12: 0.01,
            lambda21: 0.001,
            lambda22: 0.01,
            eta: 0.01,
            tol: 1e-4,
            max_iter: 10_000,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidHyperParams(format!("{what} = {v}")));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive", self.alpha);
        }
        if !(self.c_weight > 0.0 && self.c_weight.is_finite()) {
            return bad("c_weight must be positive", self.c_weight);
        }
        for (name, v) in [
            ("lambda11", self.lambda11),
            ("lambda12", self.lambda12),
            ("lambda21", self.lambda21),
            ("lambda22", self.lambda22),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be non-negative"), v);
            }
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be positive", self.eta);
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive", self.tol);
        }
        Ok(())
    }
}

/// Row-effect coefficients `beta` (K × (L+1), intercept in column 0) and
/// column-effect coefficients `delta` ((J−1) × (M+1)) where J is the number of
/// outcome columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: Array2<f64>,
    pub delta: Array2<f64>,
    pub mode: TableMode,
}

impl ModelParams {
    /// All-zero coefficients for `k` initial levels, `l` x-features and `m` y-features.
    pub fn zeros(k: usize, l: usize, m: usize, mode: TableMode) -> Self {
        let n_cols = match mode {
            TableMode::Standard => k,
            TableMode::Delta => 3,
        };
        ModelParams {
            beta: Array2::zeros((k, l + 1)),
            delta: Array2::zeros((n_cols - 1, m + 1)),
            mode,
        }
    }

    pub fn k(&self) -> usize {
        self.beta.nrows()
    }
    pub fn n_cols(&self) -> usize {
        self.delta.nrows() + 1
    }
    pub fn l(&self) -> usize {
        self.beta.ncols() - 1
    }
    pub fn m(&self) -> usize {
        self.delta.ncols() - 1
    }

    /// Number of free scalars; `K(L+M+2) − (M+1)` in standard mode.
    pub fn n_free(&self) -> usize {
        self.beta.len() + self.delta.len()
    }

    pub fn is_finite(&self) -> bool {
        self.beta.iter().chain(self.delta.iter()).all(|v| v.is_finite())
    }

    /// Flatten as `beta` (row-major) followed by `delta` (row-major).
    pub fn to_flat(&self) -> Vec<f64> {
        self.beta.iter().chain(self.delta.iter()).copied().collect()
    }

    pub fn from_flat(&self, flat: &[f64]) -> ModelParams {
        assert_eq!(flat.len(), self.n_free());
        let nb = self.beta.len();
        ModelParams {
            beta: Array2::from_shape_vec(self.beta.raw_dim(), flat[..nb].to_vec()).unwrap(),
            delta: Array2::from_shape_vec(self.delta.raw_dim(), flat[nb..].to_vec()).unwrap(),
            mode: self.mode,
        }
    }

    pub(crate) fn check_dims(&self, k: usize, n_cols: usize, l: usize, m: usize) -> Result<()> {
        if self.k() != k || self.n_cols() != n_cols || self.l() != l || self.m() != m {
            return Err(Error::Dimension(format!(
                "parameters are for K={}, columns={}, L={}, M={} but data has K={k}, columns={n_cols}, L={l}, M={m}",
                self.k(),
                self.n_cols(),
                self.l(),
                self.m()
            )));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn affine(coefs: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
    let mut s = coefs[0];
    for (c, x) in coefs.iter().skip(1).zip(v.iter()) {
        s += c * x;
    }
    s
}

/// `exp` of a clamped exponent, and whether the clamp was active.
#[inline]
pub(crate) fn clamped_exp(z: f64) -> (f64, bool) {
    if z > EXPONENT_CLAMP {
        (EXPONENT_CLAMP.exp(), true)
    } else if z < -EXPONENT_CLAMP {
        ((-EXPONENT_CLAMP).exp(), true)
    } else {
        (z.exp(), false)
    }
}

fn check_level(level: usize, max: usize, what: &str) -> Result<usize> {
    if level == 0 || level > max {
        return Err(Error::InvalidArgument(format!("{what} level {level} outside 1..={max}")));
    }
    Ok(level - 1)
}

/// `λ_i(x)` for 1-based level `i`.
pub fn row_effect(params: &ModelParams, i: usize, x: &[f64]) -> Result<f64> {
    let i0 = check_level(i, params.k(), "row")?;
    if x.len() != params.l() {
        return Err(Error::Dimension(format!("x has {} entries, expected {}", x.len(), params.l())));
    }
    Ok(clamped_exp(affine(params.beta.row(i0), ArrayView1::from(x))).0)
}

/// `γ_j(y)` for 1-based column `j < J`.
pub fn column_effect(params: &ModelParams, j: usize, y: &[f64]) -> Result<f64> {
    let j0 = check_level(j, params.n_cols() - 1, "column")?;
    if y.len() != params.m() {
        return Err(Error::Dimension(format!("y has {} entries, expected {}", y.len(), params.m())));
    }
    Ok(clamped_exp(affine(params.delta.row(j0), ArrayView1::from(y))).0)
}

/// `C((j − i)² + 1)`.
pub fn k_weight(c: f64, i: usize, j: usize) -> f64 {
    let d = j as f64 - i as f64;
    c * (d * d + 1.0)
}

/// Signed distance between initial level `i0` and outcome column `j0` (both 0-based).
#[inline]
pub(crate) fn distance(mode: TableMode, i0: usize, j0: usize) -> f64 {
    match mode {
        TableMode::Standard => j0 as f64 - i0 as f64,
        // column 0 ↔ Δ = −1, column 1 ↔ Δ = 0, column 2 ↔ Δ = +1
        TableMode::Delta => j0 as f64 - 1.0,
    }
}

#[inline]
pub(crate) fn weight(mode: TableMode, c: f64, i0: usize, j0: usize) -> f64 {
    let d = distance(mode, i0, j0);
    c * (d * d + 1.0)
}

/// Ratio of unchanged to changed observations, `n_d / n_o`.
pub fn default_c(table: &ContingencyTable) -> Result<f64> {
    let n = table.total();
    let d = table.unchanged();
    if n == d {
        return Err(Error::NoOffDiagonal);
    }
    Ok(d as f64 / (n - d) as f64)
}

/// Per-observation intermediate quantities shared by prediction, likelihood
/// and gradient.
#[derive(Debug, Clone)]
pub(crate) struct RowTerms {
    pub lambda: f64,
    pub a_clamped: bool,
    /// `p(i → j)` for the first J−1 columns.
    pub p: Vec<f64>,
    /// `K_ij γ_j / D_j`.
    pub w: Vec<f64>,
    pub g_clamped: Vec<bool>,
    pub last: f64,
}

impl RowTerms {
    pub fn with_capacity(j: usize) -> Self {
        RowTerms {
            lambda: 0.0,
            a_clamped: false,
            p: vec![0.0; j],
            w: vec![0.0; j],
            g_clamped: vec![false; j],
            last: 0.0,
        }
    }

    pub fn fill(
        &mut self,
        params: &ModelParams,
        alpha: f64,
        c: f64,
        i0: usize,
        x: ArrayView1<f64>,
        y: ArrayView1<f64>,
    ) {
        let (lambda, a_clamped) = clamped_exp(affine(params.beta.row(i0), x));
        self.lambda = lambda;
        self.a_clamped = a_clamped;
        let mut sum = 0.0;
        for j0 in 0..params.delta.nrows() {
            let (gamma, gc) = clamped_exp(affine(params.delta.row(j0), y));
            let kg = weight(params.mode, c, i0, j0) * gamma;
            let denom = alpha + lambda + kg;
            let p = lambda / denom;
            self.p[j0] = p;
            self.w[j0] = kg / denom;
            self.g_clamped[j0] = gc;
            sum += p;
        }
        self.last = 1.0 - sum;
    }

    pub fn full_vector(&self) -> Vec<f64> {
        let mut v = self.p.clone();
        v.push(self.last);
        v
    }
}

/// Probability vector over outcome columns without the validity check. The
/// last entry may be negative.
pub fn transition_vector(params: &ModelParams, hp: &HyperParams, i: usize, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let i0 = check_level(i, params.k(), "row")?;
    if x.len() != params.l() || y.len() != params.m() {
        return Err(Error::Dimension(format!(
            "x/y have {}/{} entries, expected {}/{}",
            x.len(),
            y.len(),
            params.l(),
            params.m()
        )));
    }
    let mut t = RowTerms::with_capacity(params.delta.nrows());
    t.fill(params, hp.alpha, hp.c_weight, i0, ArrayView1::from(x), ArrayView1::from(y));
    Ok(t.full_vector())
}

/// Probability vector `p(i → ·)`; errors when the completed last entry is negative.
pub fn transition_probability(
    params: &ModelParams,
    hp: &HyperParams,
    i: usize,
    x: &[f64],
    y: &[f64],
) -> Result<Vec<f64>> {
    let v = transition_vector(params, hp, i, x, y)?;
    let last = *v.last().unwrap();
    if last < 0.0 {
        return Err(Error::InvalidProbability {
            observation: None,
            last,
        });
    }
    Ok(v)
}

/// Draw a 0-based index from a probability vector.
pub fn sample_index<R: rand::Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, p) in probs.iter().enumerate() {
        acc += p.max(0.0);
        if u < acc {
            return j;
        }
    }
    probs.len() - 1
}
