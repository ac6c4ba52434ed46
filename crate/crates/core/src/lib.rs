//! Ordinal transition model over a contingency table of initial and final
//! levels.
//!
//! The crate fits row/column-effect transition probabilities by penalized
//! maximum likelihood, predicts outcomes, ranks transition-period features by
//! their effect on improvement with bootstrap p-values, imputes categorical
//! features by association score, generates synthetic data, and evaluates
//! the model against multinomial-logistic baselines under cross-validation.

pub mod cli;
pub mod data;
pub mod encode;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod imputation;
pub mod inference;
pub mod logistic;
pub mod model;
pub mod optim;
pub mod par;
pub mod rng;
pub mod simulation;

pub use data::{
    apply_grouping, build_contingency, build_dataset, ContingencyTable, Dataset, FeatureColumn, FeatureId,
    FeatureKind, LevelGrouping, Manifest, Side, TableMode,
};
pub use encode::{Design, FeatureEncoder};
pub use error::{Error, Result};
pub use estimation::{fit, gradient, log_likelihood, FitReport};
pub use evaluation::{cross_validate, metrics, EvalReport, Metrics, ModelSpec, Predictor};
pub use inference::{bootstrap_p_value, predict, rank_improving_features, to_delta, DeltaDataset, EffectRanking};
pub use model::{default_c, k_weight, transition_probability, HyperParams, ModelParams};
