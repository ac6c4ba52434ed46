use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ordtrans::cli::ModelFile;
use tempfile::TempDir;

fn ordtrans(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ordtrans"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulated dataset at multiplier 1 (275 rows) in `dir/sim`.
fn simulate(dir: &Path, seed: &str) -> PathBuf {
    let out = dir.join("sim");
    let o = ordtrans(&["simulate", "--seed", seed, "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn input_args(sim: &Path) -> [String; 4] {
    [
        "--data".into(),
        sim.join("data.csv").to_str().unwrap().into(),
        "--manifest".into(),
        sim.join("manifest.toml").to_str().unwrap().into(),
    ]
}

fn run_with(cmd: &str, sim: &Path, extra: &[&str]) -> Output {
    let inputs = input_args(sim);
    let mut args = vec![cmd];
    args.extend(inputs.iter().map(String::as_str));
    args.extend(extra);
    ordtrans(&args)
}

#[test]
fn simulate_then_evaluate_reports_every_model() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), "3");
    let out = dir.path().join("eval");
    let o = run_with("evaluate", &sim, &["--folds", "5", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("eval.csv")).unwrap();
    for model in ["NEW", "LR", "LR_row"] {
        assert!(csv.lines().any(|l| l.starts_with(&format!("{model},mean,"))), "{model} missing:\n{csv}");
    }
    assert_eq!(fs::read_to_string(out.join("folds.csv")).unwrap().lines().count(), 276);
    assert!(out.join("config.json").exists());
}

#[test]
fn missing_manifest_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), "1");
    let o = ordtrans(&[
        "fit",
        "--data",
        path(&sim.join("data.csv")),
        "--manifest",
        path(&dir.path().join("absent.toml")),
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.toml"));
}

#[test]
fn unknown_flag_and_bad_values_exit_one() {
    assert_eq!(ordtrans(&["fit", "--bogus"]).status.code(), Some(1));
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), "1");
    let o = run_with("evaluate", &sim, &["--folds", "1", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(ordtrans(&["--help"]).status.code(), Some(0));
}

#[test]
fn iteration_cap_exits_two() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), "1");
    let out = dir.path().join("fit");
    let o = run_with("fit", &sim, &["--max-iter", "1", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("fit_report.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], false);
    assert_eq!(report["iterations"], 1);
}

#[test]
fn zero_model_predicts_the_initial_level() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), "2");
    let fitted = dir.path().join("fit");
    let o = run_with("fit", &sim, &["--c-weight", "1", "--out", path(&fitted)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let model_path = fitted.join("model.json");
    let mut model: ModelFile = serde_json::from_str(&fs::read_to_string(&model_path).unwrap()).unwrap();
    model.params.beta.fill(0.0);
    model.params.delta.fill(0.0);
    fs::write(&model_path, serde_json::to_string(&model).unwrap()).unwrap();

    let out = dir.path().join("pred");
    let o = run_with("predict", &sim, &["--model", path(&model_path), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("predictions.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "observation,c_initial,predicted,p1,p2,p3");
    let mut rows = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[1], f[2], "row {line}");
        rows += 1;
    }
    assert_eq!(rows, 275);
}

#[test]
fn pvalues_with_ten_replicates_are_multiples_of_a_fifth() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), "4");
    let out = dir.path().join("pv");
    let o = run_with("pvalues", &sim, &["--bootstrap-reps", "10", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("ranking.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "Treatment,Coefficient,P-Value");
    let mut coefs = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        coefs.push(f[1].parse::<f64>().unwrap());
        let p: f64 = f[2].parse().unwrap();
        let fifths = p / 0.2;
        assert!((fifths - fifths.round()).abs() < 1e-9 && (0.0..=1.0).contains(&p), "p-value {p}");
    }
    assert_eq!(coefs.len(), 6);
    assert!(coefs.windows(2).all(|w| w[0] <= w[1]));
    assert!(out.join("ranking.md").exists());
}

#[test]
fn runs_are_reproducible_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let a = simulate(dir.path(), "9");
    let b_dir = dir.path().join("again");
    fs::create_dir_all(&b_dir).unwrap();
    let b = simulate(&b_dir, "9");
    assert_eq!(fs::read(a.join("data.csv")).unwrap(), fs::read(b.join("data.csv")).unwrap());

    let fit_dir = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let o = run_with("fit", &a, &["--threads", threads, "--out", path(&out)]);
        assert_eq!(o.status.code(), Some(0));
        fs::read_to_string(out.join("model.json")).unwrap()
    };
    let one: ModelFile = serde_json::from_str(&fit_dir("t1", "1")).unwrap();
    let four: ModelFile = serde_json::from_str(&fit_dir("t4", "4")).unwrap();
    assert_eq!(one.params, four.params);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 5\nmultiplier = 2\n[hyper]\nmax_iter = 50\n").unwrap();
    let out = dir.path().join("sim");
    let o = ordtrans(&["simulate", "--config", path(&cfg), "--multiplier", "3", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let echoed: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed["seed"], 5);
    assert_eq!(echoed["multiplier"], 3);
    assert_eq!(echoed["hyper"]["max_iter"], 50);
    assert_eq!(fs::read_to_string(out.join("data.csv")).unwrap().lines().count(), 3 * 275 + 1);
}

#[test]
fn impute_fills_missing_categorical_cells() {
    let dir = TempDir::new().unwrap();
    let mut csv = String::from("a,b,z,c_initial,c_final\n");
    for r in 0..40 {
        let (a, b) = (r % 2, (r / 2) % 2);
        let z = if r % 10 == 3 { "NA".to_string() } else { (a + b).to_string() };
        csv.push_str(&format!("{a},{b},{z},{},{}\n", r % 3 + 1, (r + 1) % 3 + 1));
    }
    let data = dir.path().join("d.csv");
    fs::write(&data, csv).unwrap();
    let manifest = dir.path().join("m.toml");
    fs::write(
        &manifest,
        r#"levels = 3
[[columns]]
name = "a"
role = "x"
kind = "categorical"
[[columns]]
name = "b"
role = "x"
kind = "categorical"
[[columns]]
name = "z"
role = "y"
kind = "categorical"
[[columns]]
name = "c_initial"
role = "c_initial"
[[columns]]
name = "c_final"
role = "c_final"
"#,
    )
    .unwrap();
    let out = dir.path().join("imp");
    let o = ordtrans(&["impute", "--data", path(&data), "--manifest", path(&manifest), "--m-neighbors", "3", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let filled = fs::read_to_string(out.join("imputed.csv")).unwrap();
    assert!(!filled.contains("NA"));
    let report = fs::read_to_string(out.join("fill_report.csv")).unwrap();
    assert!(report.contains("z,4"), "{report}");

    // fitting the raw file without imputation is refused
    let o = ordtrans(&["fit", "--data", path(&data), "--manifest", path(&manifest), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(1));
}
