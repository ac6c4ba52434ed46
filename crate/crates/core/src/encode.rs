//! Feature encoding: z-scoring of continuous columns and drop-first one-hot
//! expansion of categorical columns, producing a fully observed [`Design`].

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureColumn, FeatureKind, TableMode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnEncoding {
    Continuous {
        name: String,
        mean: f64,
        sd: f64,
    },
    /// One indicator per category after the first.
    Categorical { name: String, categories: Vec<String> },
}

impl ColumnEncoding {
    fn width(&self) -> usize {
        match self {
            ColumnEncoding::Continuous { .. } => 1,
            ColumnEncoding::Categorical { categories, .. } => categories.len().saturating_sub(1),
        }
    }

    fn names(&self) -> Vec<String> {
        match self {
            ColumnEncoding::Continuous { name, .. } => vec![name.clone()],
            ColumnEncoding::Categorical { name, categories } => categories
                .iter()
                .skip(1)
                .map(|c| format!("{name}={c}"))
                .collect(),
        }
    }
}

/// Encoding constants fitted on a training dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub x: Vec<ColumnEncoding>,
    pub y: Vec<ColumnEncoding>,
}

fn fit_side(values: &Array2<f64>, mask: &Array2<bool>, cols: &[FeatureColumn]) -> Vec<ColumnEncoding> {
    cols.iter()
        .enumerate()
        .map(|(c, col)| match &col.kind {
            FeatureKind::Continuous => {
                let (mean, sd) = if col.standardize {
                    let obs: Vec<f64> = values
                        .column(c)
                        .iter()
                        .zip(mask.column(c))
                        .filter(|(_, m)| !**m)
                        .map(|(v, _)| *v)
                        .collect();
                    mean_sd(&obs)
                } else {
                    (0.0, 1.0)
                };
                ColumnEncoding::Continuous {
                    name: col.name.clone(),
                    mean,
                    sd,
                }
            }
            FeatureKind::Categorical { categories } => ColumnEncoding::Categorical {
                name: col.name.clone(),
                categories: categories.clone(),
            },
        })
        .collect()
}

/// Sample mean and standard deviation; a degenerate column gets sd 1.
fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 1.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 1.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

fn encode_side(
    values: &Array2<f64>,
    mask: &Array2<bool>,
    enc: &[ColumnEncoding],
    cols: &[FeatureColumn],
) -> Result<Array2<f64>> {
    if enc.len() != cols.len() {
        return Err(Error::Dimension(format!(
            "encoder has {} columns, dataset has {}",
            enc.len(),
            cols.len()
        )));
    }
    let n = values.nrows();
    let width: usize = enc.iter().map(ColumnEncoding::width).sum();
    let mut out = Array2::<f64>::zeros((n, width));
    let mut offset = 0;
    for (c, e) in enc.iter().enumerate() {
        let col_name = match e {
            ColumnEncoding::Continuous { name, .. } | ColumnEncoding::Categorical { name, .. } => name,
        };
        if *col_name != cols[c].name {
            return Err(Error::Dimension(format!(
                "encoder column {col_name} does not match dataset column {}",
                cols[c].name
            )));
        }
        for r in 0..n {
            if mask[[r, c]] {
                return Err(Error::MissingFeature {
                    column: col_name.clone(),
                    observation: r,
                });
            }
            let v = values[[r, c]];
            match e {
                ColumnEncoding::Continuous { mean, sd, .. } => out[[r, offset]] = (v - mean) / sd,
                ColumnEncoding::Categorical { .. } => {
                    let idx = v as usize;
                    if idx > 0 {
                        out[[r, offset + idx - 1]] = 1.0;
                    }
                }
            }
        }
        offset += e.width();
    }
    Ok(out)
}

impl FeatureEncoder {
    /// Fit standardization constants on observed cells of `ds`.
    pub fn fit(ds: &Dataset) -> Self {
        FeatureEncoder {
            x: fit_side(ds.x(), ds.x_missing(), ds.x_columns()),
            y: fit_side(ds.y(), ds.y_missing(), ds.y_columns()),
        }
    }

    /// Pass-through encoder (no scaling) for a dataset's columns.
    pub fn identity(ds: &Dataset) -> Self {
        let id = |cols: &[FeatureColumn]| {
            cols.iter()
                .map(|col| match &col.kind {
                    FeatureKind::Continuous => ColumnEncoding::Continuous {
                        name: col.name.clone(),
                        mean: 0.0,
                        sd: 1.0,
                    },
                    FeatureKind::Categorical { categories } => ColumnEncoding::Categorical {
                        name: col.name.clone(),
                        categories: categories.clone(),
                    },
                })
                .collect()
        };
        FeatureEncoder {
            x: id(ds.x_columns()),
            y: id(ds.y_columns()),
        }
    }

    pub fn x_width(&self) -> usize {
        self.x.iter().map(ColumnEncoding::width).sum()
    }

    pub fn y_width(&self) -> usize {
        self.y.iter().map(ColumnEncoding::width).sum()
    }

    pub fn x_names(&self) -> Vec<String> {
        self.x.iter().flat_map(ColumnEncoding::names).collect()
    }

    pub fn y_names(&self) -> Vec<String> {
        self.y.iter().flat_map(ColumnEncoding::names).collect()
    }

    /// Encode features only; levels may be missing.
    pub fn encode_features(&self, ds: &Dataset) -> Result<(Array2<f64>, Array2<f64>)> {
        Ok((
            encode_side(ds.x(), ds.x_missing(), &self.x, ds.x_columns())?,
            encode_side(ds.y(), ds.y_missing(), &self.y, ds.y_columns())?,
        ))
    }

    /// Encode a fully observed dataset.
    pub fn encode(&self, ds: &Dataset) -> Result<Design> {
        let (x, y) = self.encode_features(ds)?;
        let pairs = ds.level_pairs()?;
        let (rows, cols): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        Design::new(x, y, rows, cols, ds.k(), ds.mode())
    }
}

/// Fully observed numeric view used by the estimators.
///
/// `rows` and `cols` are 0-based indices of the initial level and outcome column.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub k: usize,
    pub mode: TableMode,
}

impl Design {
    /// `initial` and `outcome` are 1-based levels.
    pub fn new(
        x: Array2<f64>,
        y: Array2<f64>,
        initial: Vec<usize>,
        outcome: Vec<usize>,
        k: usize,
        mode: TableMode,
    ) -> Result<Self> {
        let n = initial.len();
        if outcome.len() != n || x.nrows() != n || y.nrows() != n {
            return Err(Error::Dimension(format!(
                "design with {n} levels but x={:?}, y={:?}, outcomes={}",
                x.dim(),
                y.dim(),
                outcome.len()
            )));
        }
        let n_cols = match mode {
            TableMode::Standard => k,
            TableMode::Delta => 3,
        };
        for (r, (&i, &j)) in initial.iter().zip(&outcome).enumerate() {
            if i == 0 || i > k || j == 0 || j > n_cols {
                return Err(Error::LevelOutOfRange {
                    column: "design".into(),
                    record: r,
                    value: if i == 0 || i > k { i as i64 } else { j as i64 },
                    max: if i == 0 || i > k { k } else { n_cols },
                });
            }
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Dimension("design features must be finite".into()));
        }
        Ok(Design {
            x,
            y,
            rows: initial.into_iter().map(|i| i - 1).collect(),
            cols: outcome.into_iter().map(|j| j - 1).collect(),
            k,
            mode,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        match self.mode {
            TableMode::Standard => self.k,
            TableMode::Delta => 3,
        }
    }

    /// Same features with a new outcome vector (0-based columns).
    pub fn with_outcomes(&self, cols: Vec<usize>) -> Design {
        debug_assert_eq!(cols.len(), self.n_obs());
        Design {
            cols,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureColumn;
    use ndarray::array;

    #[test]
    fn standardizes_and_one_hot_encodes() {
        let ds = Dataset::new(
            array![[1.0, 0.0], [3.0, 2.0], [5.0, 1.0]],
            array![[10.0], [10.0], [10.0]],
            vec![
                FeatureColumn::continuous("a"),
                FeatureColumn::categorical("b", vec!["p".into(), "q".into(), "r".into()]),
            ],
            vec![FeatureColumn::continuous("c")],
            vec![1, 2, 2],
            vec![1, 2, 1],
            2,
        )
        .unwrap();
        let enc = FeatureEncoder::fit(&ds);
        assert_eq!(enc.x_names(), vec!["a", "b=q", "b=r"]);
        let d = enc.encode(&ds).unwrap();
        assert_eq!(d.x.dim(), (3, 3));
        assert_eq!(d.x.row(0).to_vec(), vec![-1.0, 0.0, 0.0]);
        assert_eq!(d.x.row(1).to_vec(), vec![0.0, 0.0, 1.0]);
        assert_eq!(d.x.row(2).to_vec(), vec![1.0, 1.0, 0.0]);
        // constant column: sd falls back to 1
        assert_eq!(d.y.column(0).to_vec(), vec![0.0, 0.0, 0.0]);
        assert_eq!(d.rows, vec![0, 1, 1]);
        assert_eq!(d.cols, vec![0, 1, 0]);
    }

    #[test]
    fn missing_feature_is_an_error() {
        let mut ds = Dataset::new(
            array![[1.0], [2.0]],
            Array2::zeros((2, 0)),
            vec![FeatureColumn::continuous("a")],
            vec![],
            vec![1, 1],
            vec![1, 1],
            1,
        )
        .unwrap();
        ds.set_value(1, crate::data::FeatureId::x(0), None);
        let enc = FeatureEncoder::fit(&ds);
        assert!(matches!(enc.encode(&ds), Err(Error::MissingFeature { observation: 1, .. })));
    }
}
