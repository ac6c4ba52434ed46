//! One-thread pool against the full pool on the three hot paths. Build with
//! `--no-default-features` to time the plain-iterator fallback instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ordtrans::encode::FeatureEncoder;
use ordtrans::estimation::{fit, gradient};
use ordtrans::evaluation::{cross_validate, NewModel};
use ordtrans::inference::{bootstrap_p_value, to_delta, CoefficientIndex};
use ordtrans::model::HyperParams;
use ordtrans::simulation::{generate, reduced_table, scale_table};

fn pools() -> Vec<(String, Option<rayon_pool::Pool>)> {
    rayon_pool::configurations()
}

#[cfg(feature = "parallel")]
mod rayon_pool {
    pub type Pool = rayon::ThreadPool;

    pub fn configurations() -> Vec<(String, Option<Pool>)> {
        let all = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        let mut counts = vec![1, all];
        counts.dedup();
        counts
            .into_iter()
            .map(|n| {
                let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
                (format!("{n}-threads"), Some(pool))
            })
            .collect()
    }

    pub fn run<R: Send>(pool: &Option<Pool>, f: impl FnOnce() -> R + Send) -> R {
        pool.as_ref().expect("pool configured").install(f)
    }
}

#[cfg(not(feature = "parallel"))]
mod rayon_pool {
    pub type Pool = ();

    pub fn configurations() -> Vec<(String, Option<Pool>)> {
        vec![("sequential".into(), None)]
    }

    pub fn run<R: Send>(_: &Option<Pool>, f: impl FnOnce() -> R + Send) -> R {
        f()
    }
}

fn benches(c: &mut Criterion) {
    let ds = generate(&scale_table(&reduced_table(), 20).unwrap(), 6, 1).unwrap();
    let delta = to_delta(&ds).into_inner();
    let design = FeatureEncoder::fit(&delta).encode(&delta).unwrap();
    let hp = HyperParams::default();
    let fitted = fit(&design, &hp, None).unwrap().params;
    let small = generate(&scale_table(&reduced_table(), 2).unwrap(), 6, 1).unwrap();
    let target = CoefficientIndex { feature: 1, column: 1 };

    let mut group = c.benchmark_group("gradient_5500");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| rayon_pool::run(&pool, || gradient(&fitted, &hp, &design).unwrap()))
        });
    }
    group.finish();

    let mut group = c.benchmark_group("bootstrap_20_reps");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| rayon_pool::run(&pool, || bootstrap_p_value(&design, &hp, &fitted, target, 20, 7).unwrap()))
        });
    }
    group.finish();

    let mut group = c.benchmark_group("cv_5_fold_550");
    group.sample_size(10);
    let model = NewModel { hp: hp.clone(), auto_c: true };
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| rayon_pool::run(&pool, || cross_validate(&small, &[&model], 5, 3).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(parallel_vs_sequential, benches);
criterion_main!(parallel_vs_sequential);
