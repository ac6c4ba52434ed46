//! Synthetic datasets with exact contingency-table counts and Gaussian features.
//!
//! For a cell (i, j) every observation gets `x ~ N(μ^X, I)` with
//! `μ^X_l = i + l − 1` and `y ~ N(μ^Y, I)` with `μ^Y_m = 3 + m − j`
//! (`l, m = 1..=d`).

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ContingencyTable, Dataset, FeatureColumn};
use crate::encode::Design;
use crate::error::{Error, Result};
use crate::model::{sample_index, transition_probability, HyperParams, ModelParams};
use crate::{par, rng};

/// Grouped three-level table of the 275-patient stroke cohort.
pub const REDUCED_TABLE: [[u64; 3]; 3] = [[22, 0, 0], [41, 99, 2], [0, 40, 71]];

// Fixed-N tables for the K-scaling study, diagonal-heavy like the cohort data.
// K = 4 and 5 sum to 5500; the K = 6 table sums to 5680 and is kept as given.
const K4_TABLE: [[u64; 4]; 4] = [
    [270, 170, 0, 0],
    [300, 990, 90, 40],
    [230, 300, 790, 100],
    [0, 300, 720, 1200],
];
const K5_TABLE: [[u64; 5]; 5] = [
    [270, 110, 60, 0, 0],
    [100, 580, 110, 50, 20],
    [80, 200, 420, 50, 10],
    [70, 150, 260, 740, 200],
    [0, 200, 320, 500, 1000],
];
const K6_TABLE: [[u64; 6]; 6] = [
    [300, 100, 70, 30, 0, 0],
    [120, 480, 150, 80, 20, 10],
    [80, 150, 370, 100, 50, 10],
    [70, 150, 200, 740, 160, 100],
    [30, 70, 110, 200, 500, 100],
    [0, 25, 60, 150, 225, 670],
];

/// Multipliers of the N-scaling study.
pub const MULTIPLIERS: [u64; 4] = [2, 10, 15, 20];

/// Default feature dimension per side.
pub const FEATURE_DIM: usize = 6;

fn table_from<const K: usize>(rows: &[[u64; K]; K]) -> ContingencyTable {
    let refs: Vec<&[u64]> = rows.iter().map(|r| r.as_slice()).collect();
    ContingencyTable::from_rows(&refs).expect("embedded table is square")
}

pub fn reduced_table() -> ContingencyTable {
    table_from(&REDUCED_TABLE)
}

pub fn scale_table(base: &ContingencyTable, multiplier: u64) -> Result<ContingencyTable> {
    if multiplier < 1 {
        return Err(Error::InvalidArgument("multiplier must be at least 1".into()));
    }
    ContingencyTable::new(base.counts().mapv(|v| v * multiplier), base.mode())
}

/// Table for the K-scaling study; `k = 3` is the reduced table scaled by 20.
pub fn k_table(k: usize) -> Result<ContingencyTable> {
    match k {
        3 => scale_table(&reduced_table(), 20),
        4 => Ok(table_from(&K4_TABLE)),
        5 => Ok(table_from(&K5_TABLE)),
        6 => Ok(table_from(&K6_TABLE)),
        other => Err(Error::InvalidArgument(format!(
            "no embedded table for K={other}; supported K are 3, 4, 5, 6"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub base_table: ContingencyTable,
    pub multiplier: u64,
    /// Dimension of each of x and y.
    pub feature_dim: usize,
    pub seed: u64,
}

impl SimSpec {
    pub fn table(&self) -> Result<ContingencyTable> {
        scale_table(&self.base_table, self.multiplier)
    }
}

/// Mean of x for initial level `i`.
pub fn x_mean(i: usize, dim: usize) -> Vec<f64> {
    (1..=dim).map(|l| (i + l - 1) as f64).collect()
}

/// Mean of y for final level `j`.
pub fn y_mean(j: usize, dim: usize) -> Vec<f64> {
    (1..=dim).map(|m| (3 + m) as f64 - j as f64).collect()
}

pub fn generate_spec(spec: &SimSpec) -> Result<Dataset> {
    generate(&spec.table()?, spec.feature_dim, spec.seed)
}

/// Emit exactly `n_ij` observations per cell, in row-major cell order.
pub fn generate(table: &ContingencyTable, feature_dim: usize, seed: u64) -> Result<Dataset> {
    let k = table.n_rows();
    let mut c_initial = Vec::new();
    let mut c_final = Vec::new();
    for i in 1..=k {
        for j in 1..=table.n_cols() {
            for _ in 0..table.count(i, j) {
                c_initial.push(i);
                c_final.push(j);
            }
        }
    }
    let n = c_initial.len();
    if n == 0 {
        return Err(Error::InvalidArgument("table has no observations".into()));
    }
    let rows = par::map_indices(n, |r| {
        let mut rng = rng::stream(seed, rng::Domain::Simulation, r as u64);
        let mx = x_mean(c_initial[r], feature_dim);
        let my = y_mean(c_final[r], feature_dim);
        let mut draw = |mean: &[f64]| -> Vec<f64> {
            mean.iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + z
                })
                .collect()
        };
        let x = draw(&mx);
        let y = draw(&my);
        (x, y)
    });
    let mut x = Array2::zeros((n, feature_dim));
    let mut y = Array2::zeros((n, feature_dim));
    for (r, (xr, yr)) in rows.into_iter().enumerate() {
        x.row_mut(r).assign(&ndarray::ArrayView1::from(&xr));
        y.row_mut(r).assign(&ndarray::ArrayView1::from(&yr));
    }
    let names = |p: &str| (1..=feature_dim).map(|d| FeatureColumn::continuous(format!("{p}{d}"))).collect();
    Dataset::new(x, y, names("x"), names("y"), c_initial, c_final, k)
}

/// Redraw every outcome of `design` from a known model. Returns the design
/// with the new 0-based outcome columns; an invalid probability vector is an
/// error carrying the observation index.
pub fn resample_outcomes(params: &ModelParams, hp: &HyperParams, design: &Design, seed: u64) -> Result<Design> {
    params.check_dims(design.k, design.n_cols(), design.x.ncols(), design.y.ncols())?;
    let cols = par::map_indices(design.n_obs(), |r| {
        let x = design.x.row(r).to_vec();
        let y = design.y.row(r).to_vec();
        let probs = transition_probability(params, hp, design.rows[r] + 1, &x, &y).map_err(|e| match e {
            Error::InvalidProbability { last, .. } => Error::InvalidProbability {
                observation: Some(r),
                last,
            },
            other => other,
        })?;
        let mut rng = rng::stream(seed, rng::Domain::Sampling, r as u64);
        Ok(sample_index(&probs, &mut rng))
    });
    Ok(design.with_outcomes(cols.into_iter().collect::<Result<Vec<_>>>()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_contingency;

    #[test]
    fn scaled_tables() {
        let t2 = scale_table(&reduced_table(), 2).unwrap();
        assert_eq!(t2.to_rows(), vec![vec![44, 0, 0], vec![82, 198, 4], vec![0, 80, 142]]);
        let t20 = scale_table(&reduced_table(), 20).unwrap();
        assert_eq!(t20.to_rows(), vec![vec![440, 0, 0], vec![820, 1980, 40], vec![0, 800, 1420]]);
        assert_eq!(t20.total(), 5500);
        assert_eq!(scale_table(&reduced_table(), 1).unwrap(), reduced_table());
        assert!(scale_table(&reduced_table(), 0).is_err());
    }

    #[test]
    fn k_tables() {
        assert_eq!(k_table(4).unwrap().to_rows()[0], vec![270, 170, 0, 0]);
        assert_eq!(k_table(6).unwrap().to_rows()[5], vec![0, 25, 60, 150, 225, 670]);
        assert_eq!(k_table(3).unwrap(), scale_table(&reduced_table(), 20).unwrap());
        assert_eq!(k_table(4).unwrap().total(), 5500);
        assert_eq!(k_table(5).unwrap().total(), 5500);
        assert!(k_table(7).is_err());
        assert!(k_table(2).is_err());
    }

    #[test]
    fn mean_vectors_match_both_forms() {
        // componentwise form (i − 1 + c_I, i + 3 − c_F) against the vector form
        // (i, i+1, ..., i+5) and (4−j, ..., 9−j)
        for level in 1..=6 {
            assert_eq!(x_mean(level, 6), (0..6).map(|o| (level + o) as f64).collect::<Vec<_>>());
            assert_eq!(y_mean(level, 6), (4..=9).map(|b| b as f64 - level as f64).collect::<Vec<_>>());
            for c in 1..=6 {
                assert_eq!(x_mean(level, 6)[c - 1], (c - 1 + level) as f64);
                assert_eq!(y_mean(level, 6)[c - 1], (c + 3) as f64 - level as f64);
            }
        }
        assert_eq!(x_mean(1, 6), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(y_mean(1, 6), vec![3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn generated_table_is_exact_and_seeded() {
        let t = reduced_table();
        let a = generate(&t, 6, 1).unwrap();
        let b = generate(&t, 6, 1).unwrap();
        let c = generate(&t, 6, 2).unwrap();
        assert_eq!(build_contingency(&a).unwrap(), t);
        assert_eq!(build_contingency(&c).unwrap(), t);
        assert_eq!(a, b);
        assert_ne!(a.x(), c.x());
        assert_eq!(a.n_obs(), 275);
    }

    #[test]
    fn empirical_means_converge() {
        let t = ContingencyTable::from_rows(&[&[100_000, 0], &[0, 0]]).unwrap();
        let ds = generate(&t, 6, 9).unwrap();
        let mx = ds.x().mean_axis(ndarray::Axis(0)).unwrap();
        let my = ds.y().mean_axis(ndarray::Axis(0)).unwrap();
        for d in 0..6 {
            assert!((mx[d] - x_mean(1, 6)[d]).abs() < 0.02);
            assert!((my[d] - y_mean(1, 6)[d]).abs() < 0.02);
        }
    }
}
