//! Outcome prediction, the improvement/same/worse recoding, coefficient
//! ranking and bootstrap p-values.

use std::fmt::Write as _;

use log::warn;
use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::data::{ContingencyTable, Dataset, TableMode};
use crate::encode::Design;
use crate::error::{Error, Result};
use crate::estimation::{fit, FitReport};
use crate::model::{distance, sample_index, HyperParams, ModelParams, RowTerms};
use crate::{par, rng};

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// 1-based predicted outcome column.
    pub level: usize,
    pub probabilities: Vec<f64>,
}

/// Index of the largest probability; ties go to the column nearest the
/// initial level, then to the smaller column.
fn argmax(mode: TableMode, i0: usize, probs: &[f64]) -> usize {
    let mut best = 0;
    for j0 in 1..probs.len() {
        let (p, q) = (probs[j0], probs[best]);
        if p > q || (p == q && distance(mode, i0, j0).abs() < distance(mode, i0, best).abs()) {
            best = j0;
        }
    }
    best
}

fn predict_terms(params: &ModelParams, hp: &HyperParams, i0: usize, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<Vec<f64>> {
    let mut t = RowTerms::with_capacity(params.delta.nrows());
    t.fill(params, hp.alpha, hp.c_weight, i0, x, y);
    if t.last < 0.0 {
        return Err(Error::InvalidProbability {
            observation: None,
            last: t.last,
        });
    }
    Ok(t.full_vector())
}

/// Most probable outcome for an observation with 1-based initial level `i`.
pub fn predict(params: &ModelParams, hp: &HyperParams, i: usize, x: &[f64], y: &[f64]) -> Result<Prediction> {
    let probabilities = crate::model::transition_probability(params, hp, i, x, y)?;
    let level = argmax(params.mode, i - 1, &probabilities) + 1;
    Ok(Prediction { level, probabilities })
}

/// 1-based predictions for every row of a design.
pub fn predict_design(params: &ModelParams, hp: &HyperParams, design: &Design) -> Result<Vec<usize>> {
    params.check_dims(design.k, design.n_cols(), design.x.ncols(), design.y.ncols())?;
    par::map_indices(design.n_obs(), |k| {
        let i0 = design.rows[k];
        predict_terms(params, hp, i0, design.x.row(k), design.y.row(k))
            .map(|p| argmax(params.mode, i0, &p) + 1)
            .map_err(|e| match e {
                Error::InvalidProbability { last, .. } => Error::InvalidProbability {
                    observation: Some(k),
                    last,
                },
                other => other,
            })
    })
    .into_iter()
    .collect()
}

/// A dataset whose outcome is `Δ = sign(c_F − c_I)` stored as columns 1..=3.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaDataset(Dataset);

impl DeltaDataset {
    pub fn dataset(&self) -> &Dataset {
        &self.0
    }

    pub fn into_inner(self) -> Dataset {
        self.0
    }
}

/// Column (1..=3) for the signed change from `initial` to `final_level`.
pub fn delta_column(initial: usize, final_level: usize) -> usize {
    match final_level.cmp(&initial) {
        std::cmp::Ordering::Less => 1,
        std::cmp::Ordering::Equal => 2,
        std::cmp::Ordering::Greater => 3,
    }
}

pub fn to_delta(ds: &Dataset) -> DeltaDataset {
    let mut out = ds.clone();
    if ds.mode() == TableMode::Standard {
        out.c_final = ds
            .c_initial()
            .iter()
            .zip(ds.c_final())
            .map(|(ci, cf)| match (ci, cf) {
                (Some(i), Some(j)) => Some(delta_column(*i, *j)),
                _ => None,
            })
            .collect();
        out.set_mode(TableMode::Delta);
    }
    DeltaDataset(out)
}

/// Counts of improved, unchanged and worse transitions in a standard table.
pub fn delta_counts(table: &ContingencyTable) -> [u64; 3] {
    let mut counts = [0; 3];
    for i in 1..=table.n_rows() {
        for j in 1..=table.n_cols() {
            counts[delta_column(i, j) - 1] += table.count(i, j);
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEntry {
    pub feature: String,
    pub coefficient: f64,
    pub p_value: Option<f64>,
}

/// Transition-period features ordered from most improving to least.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EffectRanking {
    pub entries: Vec<EffectEntry>,
}

fn fmt_p(p: Option<f64>) -> String {
    p.map(|v| format!("{v:.4}")).unwrap_or_default()
}

impl EffectRanking {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("Treatment,Coefficient,P-Value\n");
        for e in &self.entries {
            let name = if e.feature.contains([',', '"']) {
                format!("\"{}\"", e.feature.replace('"', "\"\""))
            } else {
                e.feature.clone()
            };
            let _ = writeln!(s, "{name},{},{}", e.coefficient, fmt_p(e.p_value));
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Treatment | Coefficient | P-Value |\n|---|---:|---:|\n");
        for e in &self.entries {
            let _ = writeln!(s, "| {} | {:.4} | {} |", e.feature, e.coefficient, fmt_p(e.p_value));
        }
        s
    }
}

/// Rank y-features by their coefficient on the improvement column (Δ = −1).
pub fn rank_improving_features(report: &FitReport, names: &[String]) -> Result<EffectRanking> {
    if !report.converged {
        return Err(Error::NotConverged);
    }
    let params = &report.params;
    if params.mode != TableMode::Delta {
        return Err(Error::InvalidArgument("ranking needs a fit on the improvement/same/worse outcome".into()));
    }
    if names.len() != params.m() {
        return Err(Error::Dimension(format!(
            "{} feature names for {} y-coefficients",
            names.len(),
            params.m()
        )));
    }
    let mut entries: Vec<EffectEntry> = names
        .iter()
        .enumerate()
        .map(|(m, name)| EffectEntry {
            feature: name.clone(),
            coefficient: params.delta[[0, m + 1]],
            p_value: None,
        })
        .collect();
    entries.sort_by(|a, b| a.coefficient.total_cmp(&b.coefficient));
    Ok(EffectRanking { entries })
}

/// `2 · min(#{null > observed}, #{null < observed}) / B`, capped at 1.
pub fn empirical_p_value(observed: f64, null: &[f64]) -> f64 {
    if null.is_empty() {
        return f64::NAN;
    }
    let b = null.len() as f64;
    let above = null.iter().filter(|v| **v > observed).count() as f64;
    let below = null.iter().filter(|v| **v < observed).count() as f64;
    (2.0 * (above / b).min(below / b)).min(1.0)
}

/// Column coefficient `δ_mj`: `feature` is the 1-based y-feature, `column`
/// the 1-based outcome column (`< J`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoefficientIndex {
    pub feature: usize,
    pub column: usize,
}

impl CoefficientIndex {
    fn check(&self, params: &ModelParams) -> Result<(usize, usize)> {
        if self.feature == 0 || self.feature > params.m() || self.column == 0 || self.column >= params.n_cols() {
            return Err(Error::InvalidArgument(format!(
                "coefficient (feature {}, column {}) outside 1..={} × 1..={}",
                self.feature,
                self.column,
                params.m(),
                params.n_cols() - 1
            )));
        }
        Ok((self.column - 1, self.feature))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub observed: f64,
    pub p_value: f64,
    /// Refitted coefficient for every replicate that did not diverge.
    pub null_values: Vec<f64>,
    pub dropped: usize,
}

/// Bootstrap p-value for `δ_target` under the null `δ_target = 0`.
///
/// Each replicate redraws every outcome from the fitted model with the target
/// coefficient zeroed, then refits from the default starting point, the same
/// start the observed fit uses, so each replicate reruns the whole estimator.
/// Replicates whose refit fails are dropped; more than 10% dropped is an error.
pub fn bootstrap_p_value(
    design: &Design,
    hp: &HyperParams,
    fitted: &ModelParams,
    target: CoefficientIndex,
    reps: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    if reps == 0 {
        return Err(Error::InvalidArgument("bootstrap needs at least one replicate".into()));
    }
    fitted.check_dims(design.k, design.n_cols(), design.x.ncols(), design.y.ncols())?;
    let (row, col) = target.check(fitted)?;
    let observed = fitted.delta[[row, col]];
    let mut null_model = fitted.clone();
    null_model.delta[[row, col]] = 0.0;

    let probs: Vec<Vec<f64>> = par::map_indices(design.n_obs(), |k| {
        let mut t = RowTerms::with_capacity(null_model.delta.nrows());
        t.fill(&null_model, hp.alpha, hp.c_weight, design.rows[k], design.x.row(k), design.y.row(k));
        t.full_vector()
    });
    let invalid = probs.iter().filter(|p| p.last().is_some_and(|v| *v < 0.0)).count();
    if invalid > 0 {
        warn!("zeroing the target gives {invalid} invalid probability vectors; their last entry is sampled as zero");
    }

    let outcomes = par::map_indices(reps, |b| {
        let mut rng = rng::stream(seed, rng::Domain::Bootstrap, b as u64);
        let cols: Vec<usize> = probs.iter().map(|p| sample_index(p, &mut rng)).collect();
        let resampled = design.with_outcomes(cols);
        match fit(&resampled, hp, None) {
            Ok(r) => {
                if !r.converged {
                    warn!("bootstrap replicate {b} stopped at the iteration cap");
                }
                Some(r.params.delta[[row, col]])
            }
            Err(e) => {
                warn!("bootstrap replicate {b} dropped: {e}");
                None
            }
        }
    });
    let null_values: Vec<f64> = outcomes.iter().flatten().copied().collect();
    let dropped = reps - null_values.len();
    if dropped * 10 > reps {
        return Err(Error::TooManyDropped { dropped, total: reps });
    }
    Ok(BootstrapResult {
        observed,
        p_value: empirical_p_value(observed, &null_values),
        null_values,
        dropped,
    })
}

/// Attach bootstrap p-values for the improvement-column coefficient of every
/// ranked feature.
pub fn attach_p_values(
    ranking: &mut EffectRanking,
    names: &[String],
    design: &Design,
    hp: &HyperParams,
    fitted: &ModelParams,
    reps: usize,
    seed: u64,
) -> Result<()> {
    for entry in &mut ranking.entries {
        let feature = names
            .iter()
            .position(|n| *n == entry.feature)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown feature {}", entry.feature)))?;
        let target = CoefficientIndex {
            feature: feature + 1,
            column: 1,
        };
        entry.p_value = Some(bootstrap_p_value(design, hp, fitted, target, reps, seed.wrapping_add(feature as u64))?.p_value);
    }
    Ok(())
}
