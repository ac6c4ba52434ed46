//! Association-score imputation of categorical features.
//!
//! For a missing cell in row `i` every donor row `k` with the target observed
//! is scored by `Q_ik = (C_ik − D_ik) / (C_ik + D_ik)`, where `C_ik` and
//! `D_ik` count equal and unequal values over the other feature columns
//! observed in both rows. The fill value is drawn uniformly from the donors
//! with the `m` highest scores.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureId, FeatureKind};
use crate::error::{Error, Result};
use crate::{par, rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociationScore {
    pub value: f64,
    pub concordant: usize,
    pub discordant: usize,
}

impl AssociationScore {
    pub fn comparable(&self) -> usize {
        self.concordant + self.discordant
    }
}

/// Association between two rows over positions observed in both; `None` when
/// no position is comparable.
pub fn association(a: &[Option<f64>], b: &[Option<f64>]) -> Result<Option<AssociationScore>> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("rows have {} and {} entries", a.len(), b.len())));
    }
    Ok(score(a, b))
}

fn score(a: &[Option<f64>], b: &[Option<f64>]) -> Option<AssociationScore> {
    let (mut concordant, mut discordant) = (0, 0);
    for (u, v) in a.iter().zip(b) {
        if let (Some(u), Some(v)) = (u, v) {
            if u == v {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let n = concordant + discordant;
    (n > 0).then(|| AssociationScore {
        value: (concordant as f64 - discordant as f64) / n as f64,
        concordant,
        discordant,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImputeSettings {
    /// Number of top-scoring donors.
    pub m_neighbors: usize,
    /// Use quartile bins of continuous columns in the association score;
    /// when false they are ignored.
    pub bin_continuous: bool,
}

impl Default for ImputeSettings {
    fn default() -> Self {
        ImputeSettings {
            m_neighbors: 5,
            bin_continuous: true,
        }
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Comparable representation of every feature except `skip`: category index
/// for categorical columns, quartile bin for continuous ones.
fn predictor_rows(ds: &Dataset, skip: FeatureId, settings: &ImputeSettings) -> Vec<Vec<Option<f64>>> {
    let ids: Vec<FeatureId> = ds.feature_ids().into_iter().filter(|id| *id != skip).collect();
    let cuts: Vec<Option<[f64; 3]>> = ids
        .iter()
        .map(|id| match ds.column(*id).kind {
            FeatureKind::Categorical { .. } => None,
            FeatureKind::Continuous => {
                let mut v: Vec<f64> = (0..ds.n_obs()).filter_map(|r| ds.value(r, *id)).collect();
                if v.is_empty() {
                    return None;
                }
                v.sort_by(f64::total_cmp);
                Some([quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75)])
            }
        })
        .collect();
    (0..ds.n_obs())
        .map(|r| {
            ids.iter()
                .zip(&cuts)
                .map(|(id, cut)| {
                    let v = ds.value(r, *id)?;
                    match (&ds.column(*id).kind, cut) {
                        (FeatureKind::Categorical { .. }, _) => Some(v),
                        (FeatureKind::Continuous, Some(c)) if settings.bin_continuous => {
                            Some(c.iter().filter(|q| v > **q).count() as f64)
                        }
                        _ => None,
                    }
                })
                .collect()
        })
        .collect()
}

fn column_key(ds: &Dataset, id: FeatureId) -> u64 {
    ds.feature_ids().iter().position(|f| *f == id).unwrap_or(0) as u64
}

fn require_categorical(ds: &Dataset, id: FeatureId) -> Result<usize> {
    match &ds.column(id).kind {
        FeatureKind::Categorical { categories } => Ok(categories.len()),
        FeatureKind::Continuous => Err(Error::InvalidArgument(format!(
            "column {} is continuous; association imputation needs a categorical column",
            ds.column(id).name
        ))),
    }
}

fn observed_rows(ds: &Dataset, id: FeatureId) -> Result<Vec<usize>> {
    let rows: Vec<usize> = (0..ds.n_obs()).filter(|r| ds.value(*r, id).is_some()).collect();
    if rows.is_empty() {
        return Err(Error::NoObservedValues(ds.column(id).name.clone()));
    }
    Ok(rows)
}

fn missing_rows(ds: &Dataset, id: FeatureId) -> Vec<usize> {
    (0..ds.n_obs()).filter(|r| ds.value(*r, id).is_none()).collect()
}

/// Donor rows for `target`: the `m` best-scoring rows plus any tied with the
/// `m`-th. Rows without a comparable position are skipped.
fn top_donors(rows: &[Vec<Option<f64>>], target: usize, candidates: &[usize], m: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|&&k| k != target)
        .filter_map(|&k| score(&rows[target], &rows[k]).map(|s| (s.value, k)))
        .collect();
    if scored.is_empty() || m == 0 {
        return Vec::new();
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let cutoff = scored[m.min(scored.len()) - 1].0;
    scored.into_iter().take_while(|(s, _)| *s >= cutoff).map(|(_, k)| k).collect()
}

/// Fill the missing cells of one categorical column.
pub fn impute_categorical(ds: &Dataset, id: FeatureId, settings: &ImputeSettings, seed: u64) -> Result<Dataset> {
    require_categorical(ds, id)?;
    let observed = observed_rows(ds, id)?;
    let missing = missing_rows(ds, id);
    if missing.is_empty() {
        return Ok(ds.clone());
    }
    let rows = predictor_rows(ds, id, settings);
    let key = column_key(ds, id);
    let fills = par::map_slice(&missing, |&r| {
        let donors = top_donors(&rows, r, &observed, settings.m_neighbors);
        let pool = if donors.is_empty() { &observed } else { &donors };
        let mut rng = rng::stream(seed, rng::Domain::Impute, (key << 32) | r as u64);
        let pick = pool[rng.random_range(0..pool.len())];
        ds.value(pick, id)
    });
    let mut out = ds.clone();
    for (r, v) in missing.iter().zip(fills) {
        out.set_value(*r, id, v);
    }
    Ok(out)
}

/// Impute every categorical column with missing cells. Scores always use the
/// original observed values, so the column order does not matter. Returns the
/// per-column fill counts.
pub fn impute_all_categorical(ds: &Dataset, settings: &ImputeSettings, seed: u64) -> Result<(Dataset, Vec<(String, usize)>)> {
    let mut out = ds.clone();
    let mut counts = Vec::new();
    for id in ds.feature_ids() {
        if !ds.column(id).kind.is_categorical() {
            continue;
        }
        let missing = missing_rows(ds, id);
        if missing.is_empty() {
            continue;
        }
        let filled = impute_categorical(ds, id, settings, seed)?;
        for r in &missing {
            out.set_value(*r, id, filled.value(*r, id));
        }
        counts.push((ds.column(id).name.clone(), missing.len()));
    }
    Ok((out, counts))
}

/// Replace missing cells of a continuous column by the observed mean.
pub fn impute_continuous_mean(ds: &Dataset, id: FeatureId) -> Result<Dataset> {
    if ds.column(id).kind.is_categorical() {
        return Err(Error::InvalidArgument(format!(
            "column {} is categorical; mean imputation needs a continuous column",
            ds.column(id).name
        )));
    }
    let observed = observed_rows(ds, id)?;
    let mean = observed.iter().map(|r| ds.value(*r, id).unwrap()).sum::<f64>() / observed.len() as f64;
    let mut out = ds.clone();
    for r in missing_rows(ds, id) {
        out.set_value(r, id, Some(mean));
    }
    Ok(out)
}

/// Mean-impute every continuous column with missing cells.
pub fn impute_all_continuous(ds: &Dataset) -> Result<(Dataset, Vec<(String, usize)>)> {
    let mut out = ds.clone();
    let mut counts = Vec::new();
    for id in ds.feature_ids() {
        if ds.column(id).kind.is_categorical() || ds.missing_count(id) == 0 {
            continue;
        }
        counts.push((ds.column(id).name.clone(), ds.missing_count(id)));
        out = impute_continuous_mean(&out, id)?;
    }
    Ok((out, counts))
}

/// A strategy for filling one categorical column.
pub trait Imputer: Sync {
    fn name(&self) -> &str;
    fn impute(&self, ds: &Dataset, id: FeatureId, seed: u64) -> Result<Dataset>;
}

#[derive(Debug, Clone, Default)]
pub struct AssociationImputer(pub ImputeSettings);

impl Imputer for AssociationImputer {
    fn name(&self) -> &str {
        "association"
    }
    fn impute(&self, ds: &Dataset, id: FeatureId, seed: u64) -> Result<Dataset> {
        impute_categorical(ds, id, &self.0, seed)
    }
}

/// Uniform draw over the declared categories.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformImputer;

impl Imputer for UniformImputer {
    fn name(&self) -> &str {
        "uniform"
    }
    fn impute(&self, ds: &Dataset, id: FeatureId, seed: u64) -> Result<Dataset> {
        let n_cat = require_categorical(ds, id)?;
        let key = column_key(ds, id);
        let mut out = ds.clone();
        for r in missing_rows(ds, id) {
            let mut rng = rng::stream(seed, rng::Domain::Impute, (key << 32) | r as u64);
            out.set_value(r, id, Some(rng.random_range(0..n_cat) as f64));
        }
        Ok(out)
    }
}

/// Draw from the column's observed values.
#[derive(Debug, Clone, Copy, Default)]
pub struct MarginalImputer;

impl Imputer for MarginalImputer {
    fn name(&self) -> &str {
        "marginal"
    }
    fn impute(&self, ds: &Dataset, id: FeatureId, seed: u64) -> Result<Dataset> {
        require_categorical(ds, id)?;
        let observed = observed_rows(ds, id)?;
        let key = column_key(ds, id);
        let mut out = ds.clone();
        for r in missing_rows(ds, id) {
            let mut rng = rng::stream(seed, rng::Domain::Impute, (key << 32) | r as u64);
            let pick = observed[rng.random_range(0..observed.len())];
            out.set_value(r, id, ds.value(pick, id));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskScore {
    pub imputer: String,
    pub mean: f64,
    pub sd: f64,
    pub per_repeat: Vec<f64>,
}

/// Hide `fraction` of each listed column at random, impute, and report the
/// share of hidden cells recovered exactly, over `repeats` independent masks.
pub fn mask_and_score(
    ds: &Dataset,
    columns: &[FeatureId],
    fraction: f64,
    imputer: &dyn Imputer,
    repeats: usize,
    seed: u64,
) -> Result<MaskScore> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("mask fraction {fraction} outside (0, 1)")));
    }
    if repeats == 0 || columns.is_empty() {
        return Err(Error::InvalidArgument("need at least one repeat and one column".into()));
    }
    for id in columns {
        require_categorical(ds, *id)?;
        if ds.missing_count(*id) > 0 {
            return Err(Error::InvalidArgument(format!(
                "column {} must be fully observed before masking",
                ds.column(*id).name
            )));
        }
    }
    let n = ds.n_obs();
    let per_repeat = (0..repeats)
        .map(|rep| {
            let mut masked = ds.clone();
            let mut hidden = Vec::new();
            for (c, id) in columns.iter().enumerate() {
                let mut rng = rng::stream(seed, rng::Domain::Mask, ((rep as u64) << 32) | c as u64);
                let count = ((n as f64 * fraction).round() as usize).clamp(1, n);
                for r in sample(&mut rng, n, count) {
                    masked.set_value(r, *id, None);
                    hidden.push((r, *id));
                }
            }
            let mut filled = masked.clone();
            let run_seed = seed ^ (rep as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            for id in columns {
                let one = imputer.impute(&masked, *id, run_seed)?;
                for r in 0..n {
                    if masked.value(r, *id).is_none() {
                        filled.set_value(r, *id, one.value(r, *id));
                    }
                }
            }
            let correct = hidden.iter().filter(|(r, id)| filled.value(*r, *id) == ds.value(*r, *id)).count();
            Ok(correct as f64 / hidden.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = per_repeat.iter().sum::<f64>() / repeats as f64;
    let sd = if repeats > 1 {
        (per_repeat.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(MaskScore {
        imputer: imputer.name().to_string(),
        mean,
        sd,
        per_repeat,
    })
}

/// Planted structure: binary columns `a`, `b`, target `z = a + b` and
/// `noise_columns` independent binary columns.
pub fn planted_dataset(n: usize, noise_columns: usize, seed: u64) -> Result<Dataset> {
    use crate::data::FeatureColumn;
    use ndarray::Array2;
    let bin = || vec!["0".to_string(), "1".to_string()];
    let width = 3 + noise_columns;
    let mut x = Array2::zeros((n, width));
    for r in 0..n {
        let mut rng = rng::stream(seed, rng::Domain::Simulation, r as u64);
        let a = rng.random_range(0..2) as f64;
        let b = rng.random_range(0..2) as f64;
        x[[r, 0]] = a;
        x[[r, 1]] = b;
        x[[r, 2]] = a + b;
        for c in 3..width {
            x[[r, c]] = rng.random_range(0..2) as f64;
        }
    }
    let mut cols = vec![
        FeatureColumn::categorical("a", bin()),
        FeatureColumn::categorical("b", bin()),
        FeatureColumn::categorical("z", vec!["0".into(), "1".into(), "2".into()]),
    ];
    cols.extend((3..width).map(|c| FeatureColumn::categorical(format!("noise{}", c - 2), bin())));
    Dataset::new(x, Array2::zeros((n, 0)), cols, vec![], vec![1; n], vec![1; n], 1)
}
