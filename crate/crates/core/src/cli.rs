//! Command-line front end.
//!
//! Exit codes: 0 success (fit converged), 1 input or parse error, 2 fit
//! stopped at the iteration cap, 3 divergence.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use crate::data::{load_dataset, save_csv, Dataset, Manifest};
use crate::encode::FeatureEncoder;
use crate::error::Error;
use crate::estimation::{fit, FitReport};
use crate::evaluation::{cross_validate, design_c, LrDelta, LrRowwise, NewModel};
use crate::imputation::{impute_all_categorical, impute_all_continuous, ImputeSettings};
use crate::inference::{attach_p_values, predict, rank_improving_features, to_delta};
use crate::model::{HyperParams, ModelParams};
use crate::simulation::{generate, reduced_table, scale_table, k_table};
use crate::{par, TableMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_MAX_ITER: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

/// Effective settings of a run: config-file values overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub hyper: HyperParams,
    /// Set `C` to the training table's unchanged/changed ratio.
    pub auto_c: bool,
    pub impute: ImputeSettings,
    pub impute_first: bool,
    pub delta: bool,
    pub folds: usize,
    pub multiplier: u64,
    pub k: usize,
    pub feature_dim: usize,
    pub bootstrap_reps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: None,
            hyper: HyperParams::default(),
            auto_c: true,
            impute: ImputeSettings::default(),
            impute_first: false,
            delta: false,
            folds: 5,
            multiplier: 1,
            k: 3,
            feature_dim: crate::simulation::FEATURE_DIM,
            bootstrap_reps: 500,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> crate::Result<()> {
        self.hyper.validate()?;
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.folds < 2 {
            return bad("folds must be at least 2");
        }
        if self.multiplier < 1 {
            return bad("multiplier must be at least 1");
        }
        if !(3..=6).contains(&self.k) {
            return bad("k must be one of 3, 4, 5, 6");
        }
        if self.feature_dim == 0 {
            return bad("feature dimension must be positive");
        }
        if self.bootstrap_reps == 0 {
            return bad("bootstrap-reps must be at least 1");
        }
        if self.impute.m_neighbors == 0 {
            return bad("m-neighbors must be at least 1");
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1");
        }
        Ok(())
    }
}

/// Serialized fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub params: ModelParams,
    pub hyper: HyperParams,
    pub encoder: FeatureEncoder,
    pub config: RunConfig,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "ordtrans", version, about = "Ordinal transition model over initial/final level tables")]
pub struct Cli {
    /// TOML file with run settings; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with exact table counts.
    Simulate(SimulateArgs),
    /// Fill missing categorical cells by association score and continuous cells by the mean.
    Impute(ImputeArgs),
    /// Fit the transition model.
    Fit(FitArgs),
    /// Predict outcomes with a fitted model.
    Predict(PredictArgs),
    /// Rank y-features by their effect on improvement, with bootstrap p-values.
    Pvalues(PvalueArgs),
    /// Cross-validate the model against logistic baselines.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct HyperArgs {
    /// Off-diagonal weight; disables the automatic choice.
    #[arg(long)]
    pub c_weight: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Impute missing features before fitting.
    #[arg(long)]
    pub impute_first: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scale factor applied to the table counts.
    #[arg(long)]
    pub multiplier: Option<u64>,
    /// Number of levels (3 uses the grouped cohort table; 4 to 6 the fixed-N tables).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub m_neighbors: Option<usize>,
    /// Leave continuous columns out of the association score.
    #[arg(long)]
    pub no_bin_continuous: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Fit on the improved/same/worse outcome instead of the final level.
    #[arg(long)]
    pub delta: bool,
    #[arg(long)]
    pub m_neighbors: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct PvalueArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Fitted improvement/same/worse model; fitted here when absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub bootstrap_reps: Option<usize>,
    #[arg(long)]
    pub m_neighbors: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub m_neighbors: Option<usize>,
}

/// A failed run with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Divergence(_) => EXIT_DIVERGENCE,
            Error::NotConverged => EXIT_MAX_ITER,
            _ => EXIT_INPUT,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type Outcome = std::result::Result<i32, Failure>;

fn load_config(path: Option<&Path>) -> crate::Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))
}

fn apply_hyper(cfg: &mut RunConfig, h: &HyperArgs) {
    if let Some(c) = h.c_weight {
        cfg.hyper.c_weight = c;
        cfg.auto_c = false;
    }
    if let Some(v) = h.alpha {
        cfg.hyper.alpha = v;
    }
    if let Some(v) = h.eta {
        cfg.hyper.eta = v;
    }
    if let Some(v) = h.tol {
        cfg.hyper.tol = v;
    }
    if let Some(v) = h.max_iter {
        cfg.hyper.max_iter = v;
    }
    cfg.impute_first |= h.impute_first;
}

/// Merge config file and flags into the effective configuration.
pub fn effective_config(cli: &Cli) -> crate::Result<RunConfig> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    let set_m = |cfg: &mut RunConfig, m: Option<usize>| {
        if let Some(m) = m {
            cfg.impute.m_neighbors = m;
        }
    };
    match &cli.command {
        Command::Simulate(a) => {
            if let Some(m) = a.multiplier {
                cfg.multiplier = m;
            }
            if let Some(k) = a.k {
                cfg.k = k;
            }
            if let Some(d) = a.feature_dim {
                cfg.feature_dim = d;
            }
        }
        Command::Impute(a) => {
            set_m(&mut cfg, a.m_neighbors);
            if a.no_bin_continuous {
                cfg.impute.bin_continuous = false;
            }
        }
        Command::Fit(a) => {
            apply_hyper(&mut cfg, &a.hyper);
            set_m(&mut cfg, a.m_neighbors);
            cfg.delta |= a.delta;
        }
        Command::Predict(_) => {}
        Command::Pvalues(a) => {
            apply_hyper(&mut cfg, &a.hyper);
            set_m(&mut cfg, a.m_neighbors);
            if let Some(b) = a.bootstrap_reps {
                cfg.bootstrap_reps = b;
            }
        }
        Command::Evaluate(a) => {
            apply_hyper(&mut cfg, &a.hyper);
            set_m(&mut cfg, a.m_neighbors);
            if let Some(f) = a.folds {
                cfg.folds = f;
            }
        }
    }
    cfg.hyper.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> crate::Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> crate::Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> crate::Result<()> {
    write(path, serde_json::to_string_pretty(value)? + "\n")
}

fn load_input(input: &InputArgs) -> crate::Result<Dataset> {
    let manifest = Manifest::load(&input.manifest)?;
    load_dataset(&input.data, &manifest)
}

fn prepare(ds: Dataset, cfg: &RunConfig) -> crate::Result<Dataset> {
    if !ds.has_missing_features() {
        return Ok(ds);
    }
    if !cfg.impute_first {
        return Err(Error::InvalidArgument(
            "dataset has missing feature values; run `ordtrans impute` first or pass --impute-first".into(),
        ));
    }
    let (ds, _) = impute_all_categorical(&ds, &cfg.impute, cfg.seed)?;
    Ok(impute_all_continuous(&ds)?.0)
}

fn cmd_simulate(cfg: &RunConfig, out: &Path) -> crate::Result<i32> {
    let base = if cfg.k == 3 { reduced_table() } else { k_table(cfg.k)? };
    let table = scale_table(&base, cfg.multiplier)?;
    let ds = generate(&table, cfg.feature_dim, cfg.seed)?;
    save_csv(&ds, &out.join("data.csv"))?;
    Manifest::for_dataset(&ds).save(&out.join("manifest.toml"))?;
    write(&out.join("table.txt"), table.to_string())?;
    info!("simulated {} observations", ds.n_obs());
    Ok(EXIT_OK)
}

fn cmd_impute(cfg: &RunConfig, a: &ImputeArgs, out: &Path) -> crate::Result<i32> {
    let ds = load_input(&a.input)?;
    let (ds, mut counts) = impute_all_categorical(&ds, &cfg.impute, cfg.seed)?;
    let (ds, cont) = impute_all_continuous(&ds)?;
    counts.extend(cont);
    save_csv(&ds, &out.join("imputed.csv"))?;
    Manifest::for_dataset(&ds).save(&out.join("manifest.toml"))?;
    let mut report = String::from("column,filled\n");
    for (name, n) in counts {
        let _ = writeln!(report, "{name},{n}");
    }
    write(&out.join("fill_report.csv"), report)?;
    Ok(EXIT_OK)
}

fn fit_and_save(ds: &Dataset, cfg: &RunConfig, out: &Path) -> crate::Result<(ModelFile, FitReport)> {
    let encoder = FeatureEncoder::fit(ds);
    let design = encoder.encode(ds)?;
    let mut hyper = cfg.hyper.clone();
    if cfg.auto_c {
        hyper.c_weight = design_c(&design)?;
    }
    let report = fit(&design, &hyper, None)?;
    let model = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        params: report.params.clone(),
        hyper,
        encoder,
        config: cfg.clone(),
    };
    write_json(&out.join("model.json"), &model)?;
    write_json(&out.join("fit_report.json"), &report)?;
    write(&out.join("trace.csv"), report.trace_csv())?;
    Ok((model, report))
}

fn cmd_fit(cfg: &RunConfig, a: &FitArgs, out: &Path) -> crate::Result<i32> {
    let mut ds = prepare(load_input(&a.input)?, cfg)?;
    if cfg.delta {
        ds = to_delta(&ds).into_inner();
    }
    let (_, report) = fit_and_save(&ds, cfg, out)?;
    info!(
        "{} after {} iterations, final objective {}",
        if report.converged { "converged" } else { "stopped" },
        report.iterations,
        report.final_objective()
    );
    Ok(if report.converged { EXIT_OK } else { EXIT_MAX_ITER })
}

fn load_model(path: &Path) -> crate::Result<ModelFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let model: ModelFile = serde_json::from_str(&text)?;
    if model.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::InvalidArgument(format!(
            "model format version {} is not supported",
            model.format_version
        )));
    }
    Ok(model)
}

fn cmd_predict(a: &PredictArgs, out: &Path) -> crate::Result<i32> {
    let model = load_model(&a.model)?;
    let mut ds = load_input(&a.input)?;
    if model.params.mode == TableMode::Delta && ds.mode() == TableMode::Standard {
        ds = to_delta(&ds).into_inner();
    }
    let (x, y) = model.encoder.encode_features(&ds)?;
    let n_cols = model.params.n_cols();
    let mut csv = String::from("observation,c_initial,predicted");
    for j in 1..=n_cols {
        let _ = write!(csv, ",p{j}");
    }
    csv.push('\n');
    for (r, ci) in ds.c_initial().iter().enumerate() {
        let i = ci.ok_or(Error::MissingLevel(r))?;
        let p = predict(
            &model.params,
            &model.hyper,
            i,
            x.row(r).as_slice().expect("standard layout"),
            y.row(r).as_slice().expect("standard layout"),
        )
        .map_err(|e| match e {
            Error::InvalidProbability { last, .. } => Error::InvalidProbability {
                observation: Some(r),
                last,
            },
            other => other,
        })?;
        let _ = write!(csv, "{},{i},{}", r + 1, p.level);
        for v in &p.probabilities {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    write(&out.join("predictions.csv"), csv)?;
    Ok(EXIT_OK)
}

fn cmd_pvalues(cfg: &RunConfig, a: &PvalueArgs, out: &Path) -> crate::Result<i32> {
    let ds = to_delta(&prepare(load_input(&a.input)?, cfg)?).into_inner();
    let (model, report) = match &a.model {
        Some(path) => {
            let model = load_model(path)?;
            if model.params.mode != TableMode::Delta {
                return Err(Error::InvalidArgument(
                    "p-values need a model fitted with --delta".into(),
                ));
            }
            let report = FitReport {
                params: model.params.clone(),
                iterations: 0,
                trace: vec![],
                converged: true,
                final_step_delta: 0.0,
            };
            (model, report)
        }
        None => fit_and_save(&ds, cfg, out)?,
    };
    let design = model.encoder.encode(&ds)?;
    let names = model.encoder.y_names();
    let mut ranking = rank_improving_features(&report, &names)?;
    attach_p_values(
        &mut ranking,
        &names,
        &design,
        &model.hyper,
        &model.params,
        cfg.bootstrap_reps,
        cfg.seed,
    )?;
    write(&out.join("ranking.csv"), ranking.to_csv())?;
    write(&out.join("ranking.md"), ranking.to_markdown())?;
    Ok(EXIT_OK)
}

fn cmd_evaluate(cfg: &RunConfig, a: &EvaluateArgs, out: &Path) -> crate::Result<i32> {
    let ds = prepare(load_input(&a.input)?, cfg)?;
    let new = NewModel {
        hp: cfg.hyper.clone(),
        auto_c: cfg.auto_c,
    };
    let lr = LrDelta {
        hp: cfg.hyper.clone(),
        ..LrDelta::default()
    };
    let row = LrRowwise {
        hp: cfg.hyper.clone(),
        ..LrRowwise::default()
    };
    let report = cross_validate(&ds, &[&new, &lr, &row], cfg.folds, cfg.seed)?;
    write(&out.join("eval.csv"), report.to_csv())?;
    write(&out.join("summary.txt"), report.summary())?;
    let mut folds = String::from("observation,fold\n");
    for (r, f) in report.assignments.iter().enumerate() {
        let _ = writeln!(folds, "{},{}", r + 1, f + 1);
    }
    write(&out.join("folds.csv"), folds)?;
    print!("{}", report.summary());
    Ok(EXIT_OK)
}

/// Run a parsed command line.
pub fn execute(cli: &Cli) -> Outcome {
    let cfg = effective_config(cli)?;
    par::init_threads(cfg.threads);
    let out = out_dir(cli)?;
    write_json(&out.join("config.json"), &cfg)?;
    let code = match &cli.command {
        Command::Simulate(_) => cmd_simulate(&cfg, &out),
        Command::Impute(a) => cmd_impute(&cfg, a, &out),
        Command::Fit(a) => cmd_fit(&cfg, a, &out),
        Command::Predict(a) => cmd_predict(a, &out),
        Command::Pvalues(a) => cmd_pvalues(&cfg, a, &out),
        Command::Evaluate(a) => cmd_evaluate(&cfg, a, &out),
    }?;
    Ok(code)
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
