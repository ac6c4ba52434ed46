//! Accuracy metrics, stratified k-fold cross-validation and the baseline
//! predictors compared against the transition model.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TableMode};
use crate::encode::{Design, FeatureEncoder};
use crate::error::{Error, Result};
use crate::estimation::fit;
use crate::logistic::Multinomial;
use crate::model::{HyperParams, ModelParams, RowTerms};
use crate::optim::AscentSettings;
use crate::{par, rng};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// Share of predictions above the true level.
    pub overestimate: f64,
    /// Share of predictions below the true level.
    pub underestimate: f64,
}

pub fn metrics(truth: &[usize], predicted: &[usize]) -> Result<Metrics> {
    if truth.len() != predicted.len() {
        return Err(Error::Dimension(format!(
            "{} true levels and {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("metrics need at least one observation".into()));
    }
    let (mut hit, mut over) = (0usize, 0usize);
    for (t, p) in truth.iter().zip(predicted) {
        if p == t {
            hit += 1;
        } else if p > t {
            over += 1;
        }
    }
    let n = truth.len() as f64;
    let accuracy = hit as f64 / n;
    let overestimate = over as f64 / n;
    Ok(Metrics {
        accuracy,
        overestimate,
        underestimate: 1.0 - accuracy - overestimate,
    })
}

/// A fitted model producing 1-based outcome levels for a design.
pub trait Predictor: Send + Sync {
    fn predict(&self, design: &Design) -> Result<Vec<usize>>;
}

/// A model family that can be trained on a standardized design.
pub trait ModelSpec: Sync {
    fn name(&self) -> String;
    fn train(&self, design: &Design) -> Result<Box<dyn Predictor>>;
}

/// The transition model. With `auto_c` the off-diagonal weight is the
/// training table's unchanged/changed ratio.
#[derive(Debug, Clone, Default)]
pub struct NewModel {
    pub hp: HyperParams,
    pub auto_c: bool,
}

/// `n_d / n_o` of a design's outcome table.
pub fn design_c(design: &Design) -> Result<f64> {
    let unchanged = design
        .rows
        .iter()
        .zip(&design.cols)
        .filter(|(i, j)| match design.mode {
            TableMode::Standard => i == j,
            TableMode::Delta => **j == 1,
        })
        .count();
    if unchanged == design.n_obs() {
        return Err(Error::NoOffDiagonal);
    }
    Ok(unchanged as f64 / (design.n_obs() - unchanged) as f64)
}

struct FittedNew {
    params: ModelParams,
    hp: HyperParams,
}

/// Predictions where an invalid probability vector (negative completed last
/// entry) still yields the argmax of the leading entries, with a count of
/// such rows.
pub fn predict_lenient(params: &ModelParams, hp: &HyperParams, design: &Design) -> (Vec<usize>, usize) {
    let out = par::map_indices(design.n_obs(), |k| {
        let i0 = design.rows[k];
        let mut t = RowTerms::with_capacity(params.delta.nrows());
        t.fill(params, hp.alpha, hp.c_weight, i0, design.x.row(k), design.y.row(k));
        let v = t.full_vector();
        let mut best = 0;
        for j0 in 1..v.len() {
            let near = crate::model::distance(params.mode, i0, j0).abs() < crate::model::distance(params.mode, i0, best).abs();
            if v[j0] > v[best] || (v[j0] == v[best] && near) {
                best = j0;
            }
        }
        (best + 1, t.last < 0.0)
    });
    let invalid = out.iter().filter(|p| p.1).count();
    (out.into_iter().map(|p| p.0).collect(), invalid)
}

impl Predictor for FittedNew {
    fn predict(&self, design: &Design) -> Result<Vec<usize>> {
        let (pred, invalid) = predict_lenient(&self.params, &self.hp, design);
        if invalid > 0 {
            warn!("{invalid} of {} held-out rows have an invalid probability vector", design.n_obs());
        }
        Ok(pred)
    }
}

impl ModelSpec for NewModel {
    fn name(&self) -> String {
        "NEW".into()
    }

    fn train(&self, design: &Design) -> Result<Box<dyn Predictor>> {
        let mut hp = self.hp.clone();
        if self.auto_c {
            hp.c_weight = design_c(design)?;
        }
        let report = fit(design, &hp, None)?;
        if !report.converged {
            warn!("NEW stopped at the iteration cap ({} iterations)", report.iterations);
        }
        Ok(Box::new(FittedNew {
            params: report.params,
            hp,
        }))
    }
}

fn concat_features(design: &Design) -> ndarray::Array2<f64> {
    ndarray::concatenate(ndarray::Axis(1), &[design.x.view(), design.y.view()]).expect("same row count")
}

fn baseline_settings(hp: &HyperParams) -> AscentSettings {
    AscentSettings {
        eta: hp.eta,
        tol: hp.tol,
        max_iter: hp.max_iter,
        max_halvings: 20,
    }
}

/// Multinomial logistic regression on `c_F − c_I` over concatenated features.
#[derive(Debug, Clone)]
pub struct LrDelta {
    pub hp: HyperParams,
    pub l2: f64,
}

impl Default for LrDelta {
    fn default() -> Self {
        LrDelta {
            hp: HyperParams::default(),
            l2: 0.01,
        }
    }
}

struct FittedLrDelta {
    model: Multinomial,
    k: usize,
}

impl Predictor for FittedLrDelta {
    fn predict(&self, design: &Design) -> Result<Vec<usize>> {
        let feats = concat_features(design);
        Ok((0..design.n_obs())
            .map(|r| {
                let d = self.model.predict(feats.row(r));
                (design.rows[r] as i64 + 1 + d).clamp(1, self.k as i64) as usize
            })
            .collect())
    }
}

impl ModelSpec for LrDelta {
    fn name(&self) -> String {
        "LR".into()
    }

    fn train(&self, design: &Design) -> Result<Box<dyn Predictor>> {
        let labels: Vec<i64> = design.rows.iter().zip(&design.cols).map(|(i, j)| *j as i64 - *i as i64).collect();
        let model = Multinomial::fit(&concat_features(design), &labels, self.l2, &baseline_settings(&self.hp))?;
        if !model.converged {
            warn!("LR stopped at the iteration cap");
        }
        Ok(Box::new(FittedLrDelta { model, k: design.k }))
    }
}

/// One multinomial classifier of `c_F` per initial level.
#[derive(Debug, Clone)]
pub struct LrRowwise {
    pub hp: HyperParams,
    pub l2: f64,
}

impl Default for LrRowwise {
    fn default() -> Self {
        LrRowwise {
            hp: HyperParams::default(),
            l2: 0.01,
        }
    }
}

struct FittedLrRowwise {
    models: BTreeMap<usize, Multinomial>,
}

impl Predictor for FittedLrRowwise {
    fn predict(&self, design: &Design) -> Result<Vec<usize>> {
        let feats = concat_features(design);
        Ok((0..design.n_obs())
            .map(|r| {
                let i0 = design.rows[r];
                match self.models.get(&i0) {
                    Some(m) => m.predict(feats.row(r)) as usize + 1,
                    None => {
                        warn!("no training rows with initial level {}; predicting no change", i0 + 1);
                        i0 + 1
                    }
                }
            })
            .collect())
    }
}

impl ModelSpec for LrRowwise {
    fn name(&self) -> String {
        "LR_row".into()
    }

    fn train(&self, design: &Design) -> Result<Box<dyn Predictor>> {
        let feats = concat_features(design);
        let settings = baseline_settings(&self.hp);
        let levels: Vec<usize> = {
            let mut v = design.rows.clone();
            v.sort_unstable();
            v.dedup();
            v
        };
        let models = par::map_slice(&levels, |&i0| {
            let idx: Vec<usize> = (0..design.n_obs()).filter(|&r| design.rows[r] == i0).collect();
            let x = feats.select(ndarray::Axis(0), &idx);
            let labels: Vec<i64> = idx.iter().map(|&r| design.cols[r] as i64).collect();
            Multinomial::fit(&x, &labels, self.l2, &settings).map(|m| (i0, m))
        })
        .into_iter()
        .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Box::new(FittedLrRowwise { models }))
    }
}

/// Predicts no change (`ĵ = c_I`).
#[derive(Debug, Clone, Copy, Default)]
pub struct NoChange;

impl Predictor for NoChange {
    fn predict(&self, design: &Design) -> Result<Vec<usize>> {
        Ok(design.rows.iter().map(|i| i + 1).collect())
    }
}

impl ModelSpec for NoChange {
    fn name(&self) -> String {
        "no_change".into()
    }
    fn train(&self, _: &Design) -> Result<Box<dyn Predictor>> {
        Ok(Box::new(NoChange))
    }
}

/// Fold index (0-based) per observation. Each `(c_I, c_F)` cell is shuffled
/// and dealt round-robin, continuing the deal across cells.
pub fn assign_folds(ds: &Dataset, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::InvalidArgument("cross-validation needs at least 2 folds".into()));
    }
    if folds > ds.n_obs() {
        return Err(Error::InvalidArgument(format!("{folds} folds for {} observations", ds.n_obs())));
    }
    let mut cells: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (r, pair) in ds.level_pairs()?.into_iter().enumerate() {
        cells.entry(pair).or_default().push(r);
    }
    let mut assignment = vec![0; ds.n_obs()];
    let mut next = 0;
    for ((i, j), mut rows) in cells {
        let mut rng = rng::stream(seed, rng::Domain::Folds, ((i as u64) << 32) | j as u64);
        rows.shuffle(&mut rng);
        for r in rows {
            assignment[r] = next % folds;
            next += 1;
        }
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEval {
    pub model: String,
    pub folds: Vec<Metrics>,
    pub mean: Metrics,
    pub sd_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_folds: usize,
    pub seed: u64,
    /// Fold index per observation.
    pub assignments: Vec<usize>,
    pub models: Vec<ModelEval>,
}

impl EvalReport {
    pub fn model(&self, name: &str) -> Option<&ModelEval> {
        self.models.iter().find(|m| m.model == name)
    }

    /// One row per model and fold plus a `mean` row per model.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,fold,accuracy,overestimate,underestimate\n");
        for m in &self.models {
            for (f, v) in m.folds.iter().enumerate() {
                let _ = writeln!(s, "{},{},{},{},{}", m.model, f + 1, v.accuracy, v.overestimate, v.underestimate);
            }
            let v = m.mean;
            let _ = writeln!(s, "{},mean,{},{},{}", m.model, v.accuracy, v.overestimate, v.underestimate);
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "{}-fold cross-validation\n{:<10} {:>9} {:>7} {:>9} {:>9}\n",
            self.n_folds, "model", "accuracy", "sd", "over", "under"
        );
        for m in &self.models {
            let _ = writeln!(
                s,
                "{:<10} {:>8.2}% {:>7.2} {:>8.2}% {:>8.2}%",
                m.model,
                100.0 * m.mean.accuracy,
                100.0 * m.sd_accuracy,
                100.0 * m.mean.overestimate,
                100.0 * m.mean.underestimate
            );
        }
        s
    }
}

fn summarize(model: String, folds: Vec<Metrics>) -> ModelEval {
    let n = folds.len() as f64;
    let mean = Metrics {
        accuracy: folds.iter().map(|m| m.accuracy).sum::<f64>() / n,
        overestimate: folds.iter().map(|m| m.overestimate).sum::<f64>() / n,
        underestimate: folds.iter().map(|m| m.underestimate).sum::<f64>() / n,
    };
    let sd_accuracy = if folds.len() > 1 {
        (folds.iter().map(|m| (m.accuracy - mean.accuracy).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    ModelEval {
        model,
        folds,
        mean,
        sd_accuracy,
    }
}

/// Cross-validate several models on shared fold assignments. Standardization
/// constants come from each training split only.
pub fn cross_validate(ds: &Dataset, specs: &[&dyn ModelSpec], folds: usize, seed: u64) -> Result<EvalReport> {
    let assignments = assign_folds(ds, folds, seed)?;
    let splits: Vec<(Design, Design)> = (0..folds)
        .map(|f| {
            let train: Vec<usize> = (0..ds.n_obs()).filter(|r| assignments[*r] != f).collect();
            let test: Vec<usize> = (0..ds.n_obs()).filter(|r| assignments[*r] == f).collect();
            let (tr, te) = (ds.subset(&train), ds.subset(&test));
            for level in 1..=ds.k() {
                if !tr.c_initial().contains(&Some(level)) {
                    return Err(Error::FoldMissingLevel { fold: f + 1, level });
                }
            }
            let enc = FeatureEncoder::fit(&tr);
            Ok((enc.encode(&tr)?, enc.encode(&te)?))
        })
        .collect::<Result<_>>()?;
    let mut models = Vec::with_capacity(specs.len());
    for spec in specs {
        let per_fold = par::map_slice(&splits, |(train, test)| {
            let model = spec.train(train)?;
            let truth: Vec<usize> = test.cols.iter().map(|j| j + 1).collect();
            metrics(&truth, &model.predict(test)?)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        models.push(summarize(spec.name(), per_fold));
    }
    Ok(EvalReport {
        n_folds: folds,
        seed,
        assignments,
        models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureColumn;
    use crate::simulation::{generate, reduced_table};
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn metric_examples() {
        let m = metrics(&[1, 2, 3, 3], &[1, 3, 2, 3]).unwrap();
        assert_eq!((m.accuracy, m.overestimate, m.underestimate), (0.5, 0.25, 0.25));
        let m = metrics(&[1, 2, 3], &[1, 2, 3]).unwrap();
        assert_eq!((m.accuracy, m.overestimate, m.underestimate), (1.0, 0.0, 0.0));
        let m = metrics(&[1, 2, 1], &[3, 3, 3]).unwrap();
        assert_eq!((m.accuracy, m.overestimate, m.underestimate), (0.0, 1.0, 0.0));
        assert!(metrics(&[1], &[1, 2]).is_err());
        assert!(metrics(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn metrics_sum_to_one_and_ignore_order(
            pairs in prop::collection::vec((1usize..6, 1usize..6), 1..60),
            rot in 0usize..60,
        ) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.iter().cloned().unzip();
            let m = metrics(&t, &p).unwrap();
            prop_assert!((m.accuracy + m.overestimate + m.underestimate - 1.0).abs() < 1e-12);
            for v in [m.accuracy, m.overestimate, m.underestimate] {
                prop_assert!((-1e-12..=1.0).contains(&v));
            }
            let mut rotated = pairs.clone();
            let len = rotated.len();
            rotated.rotate_left(rot % len);
            let (t2, p2): (Vec<usize>, Vec<usize>) = rotated.into_iter().unzip();
            let m2 = metrics(&t2, &p2).unwrap();
            prop_assert!((m.accuracy - m2.accuracy).abs() < 1e-12);
            prop_assert!((m.overestimate - m2.overestimate).abs() < 1e-12);
        }
    }

    fn reduced() -> Dataset {
        generate(&reduced_table(), 2, 3).unwrap()
    }

    #[test]
    fn folds_are_deterministic_and_partition() {
        let ds = reduced();
        let a = assign_folds(&ds, 5, 1).unwrap();
        assert_eq!(a, assign_folds(&ds, 5, 1).unwrap());
        assert_ne!(a, assign_folds(&ds, 5, 2).unwrap());
        let mut sizes = [0usize; 5];
        for f in &a {
            sizes[*f] += 1;
        }
        assert_eq!(sizes.iter().sum::<usize>(), 275);
        assert!(sizes.iter().all(|s| *s == 55));
        assert!(assign_folds(&ds, 1, 1).is_err());
    }

    #[test]
    fn no_change_accuracy_is_the_diagonal_share() {
        let report = cross_validate(&reduced(), &[&NoChange], 5, 1).unwrap();
        let acc = report.model("no_change").unwrap().mean.accuracy;
        assert!((acc - 192.0 / 275.0).abs() < 1e-12, "{acc}");
        // every fold holds 55 rows, so fold accuracies average to the pooled share
        assert!(report.to_csv().contains("no_change,mean,"));
        assert!(report.summary().contains("no_change"));
    }

    #[test]
    fn two_folds_on_four_rows() {
        let ds = Dataset::new(
            array![[0.0], [1.0], [2.0], [3.0]],
            Array2::zeros((4, 0)),
            vec![FeatureColumn::continuous("x")],
            vec![],
            vec![1, 1, 2, 2],
            vec![1, 2, 2, 1],
            2,
        )
        .unwrap();
        let report = cross_validate(&ds, &[&NoChange], 2, 0).unwrap();
        let m = &report.model("no_change").unwrap().folds;
        // the diagonal rows (0 and 2) fall in different folds under round-robin dealing
        let accs: Vec<f64> = m.iter().map(|f| f.accuracy).collect();
        assert_eq!(accs, vec![0.5, 0.5]);
        let over: f64 = m.iter().map(|f| f.overestimate).sum();
        let under: f64 = m.iter().map(|f| f.underestimate).sum();
        assert_eq!((over, under), (0.5, 0.5));
    }

    #[test]
    fn missing_level_in_training_split_is_an_error() {
        let ds = Dataset::new(
            array![[0.0], [1.0], [2.0]],
            Array2::zeros((3, 0)),
            vec![FeatureColumn::continuous("x")],
            vec![],
            vec![1, 1, 2],
            vec![1, 1, 2],
            2,
        )
        .unwrap();
        assert!(matches!(
            cross_validate(&ds, &[&NoChange], 3, 0),
            Err(Error::FoldMissingLevel { level: 2, .. })
        ));
    }

    fn toy_design(rows: Vec<usize>, cols: Vec<usize>, x: Array2<f64>) -> Design {
        let n = rows.len();
        Design::new(x, Array2::zeros((n, 0)), rows, cols, 3, TableMode::Standard).unwrap()
    }

    #[test]
    fn lr_single_class_predicts_no_change() {
        let d = toy_design(vec![1, 2, 3, 2], vec![1, 2, 3, 2], array![[0.1], [0.5], [-1.0], [2.0]]);
        let p = LrDelta::default().train(&d).unwrap().predict(&d).unwrap();
        assert_eq!(p, vec![1, 2, 3, 2]);
    }

    #[test]
    fn lr_separable_toy_and_clamping() {
        let x = array![[-2.0], [-1.5], [-1.0], [-0.5], [0.5], [1.0], [1.5], [2.0]];
        let rows = vec![2, 3, 2, 3, 2, 3, 2, 3];
        let cols = vec![1, 2, 1, 2, 2, 3, 2, 3];
        let d = toy_design(rows, cols.clone(), x);
        let p = LrDelta::default().train(&d).unwrap().predict(&d).unwrap();
        assert_eq!(p, cols);
        let low = toy_design(vec![1], vec![1], array![[-3.0]]);
        let trained = LrDelta::default().train(&d).unwrap();
        assert_eq!(trained.predict(&low).unwrap(), vec![1]);
    }

    #[test]
    fn rowwise_classifiers_are_independent() {
        let x = array![[0.0], [1.0], [2.0], [-1.0], [-2.0], [0.5]];
        let d = toy_design(vec![1, 1, 1, 2, 2, 2], vec![1, 1, 1, 1, 3, 2], x.clone());
        let spec = LrRowwise::default();
        let full = spec.train(&d).unwrap().predict(&d).unwrap();
        assert_eq!(&full[..3], &[1, 1, 1]);
        let row2 = toy_design(vec![2, 2, 2], vec![1, 3, 2], x.slice(ndarray::s![3.., ..]).to_owned());
        let only = spec.train(&row2).unwrap().predict(&d).unwrap();
        assert_eq!(&full[3..], &only[3..]);
        // level 1 unseen in the second training set falls back to no change
        assert_eq!(&only[..3], &[1, 1, 1]);
    }

    #[test]
    fn design_c_matches_table_ratio() {
        let ds = reduced();
        let d = FeatureEncoder::fit(&ds).encode(&ds).unwrap();
        assert!((design_c(&d).unwrap() - 192.0 / 83.0).abs() < 1e-12);
    }
}
