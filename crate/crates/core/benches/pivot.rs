//! Pivot tabulation and a small simulation, on the rayon pool versus a
//! single thread. Build with `--no-default-features` for the plain-iterator
//! fallback; then only the sequential rows are produced.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rrt::grow::{grow, GrowConfig};
use rrt::inference::{PivotEvaluator, QuadratureSettings, Variant};
use rrt::simlab::{make_replicate, run_experiment, ExperimentConfig};

fn modes() -> Vec<(&'static str, Option<rayon_pool::Pool>)> {
    let mut m = vec![("sequential", rayon_pool::single())];
    if rrt::par::is_parallel() {
        m.push(("parallel", None));
    }
    m
}

#[cfg(feature = "parallel")]
mod rayon_pool {
    pub type Pool = rayon::ThreadPool;
    pub fn single() -> Option<Pool> {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(1)
                .build()
                .unwrap(),
        )
    }
    pub fn run<T: Send>(pool: &Option<Pool>, f: impl FnOnce() -> T + Send) -> T {
        match pool {
            Some(p) => p.install(f),
            None => f(),
        }
    }
}

#[cfg(not(feature = "parallel"))]
mod rayon_pool {
    pub type Pool = ();
    pub fn single() -> Option<Pool> {
        None
    }
    pub fn run<T: Send>(_: &Option<Pool>, f: impl FnOnce() -> T + Send) -> T {
        f()
    }
}

fn pivot_tabulation(c: &mut Criterion) {
    let cfg = ExperimentConfig::preset("fig1").unwrap();
    let rep = make_replicate(&cfg.cells()[0], cfg.seed, 0).unwrap();
    let tree = grow(&rep.dataset, &GrowConfig::intro_preset(2.0, 1)).unwrap();
    let coarse = QuadratureSettings {
        factor_stride: 20,
        ..Default::default()
    };
    let mut g = c.benchmark_group("pivot");
    g.sample_size(10);
    for (mode, pool) in modes() {
        g.bench_function(BenchmarkId::new("conditioned_r1_n200", mode), |b| {
            b.iter(|| {
                rayon_pool::run(&pool, || {
                    let ev = PivotEvaluator::new(
                        &tree,
                        &rep.dataset,
                        0,
                        2.0,
                        Variant::default(),
                        Default::default(),
                    )
                    .unwrap();
                    ev.invert_ci(0.1).unwrap()
                })
            })
        });
        g.bench_function(BenchmarkId::new("full_stride20_n200", mode), |b| {
            b.iter(|| {
                rayon_pool::run(&pool, || {
                    PivotEvaluator::new(&tree, &rep.dataset, 0, 2.0, Variant::Full, coarse)
                        .unwrap()
                        .p_value()
                })
            })
        });
    }
    g.finish();
}

fn simulation(c: &mut Criterion) {
    let mut cfg = ExperimentConfig::preset("smoke").unwrap();
    cfg.reps = 8;
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    for (mode, pool) in modes() {
        g.bench_function(BenchmarkId::new("smoke_8_reps", mode), |b| {
            b.iter(|| rayon_pool::run(&pool, || run_experiment(&cfg).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, pivot_tabulation, simulation);
criterion_main!(benches);
