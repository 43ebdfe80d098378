//! Criterion micro-benchmarks for the hot paths of the estimation pipeline:
//! filtering, the high-order whitening fit, the full three-stage estimator,
//! and Gauss-Newton refinement.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use bjsd_core::arx::fit_arx;
use bjsd_core::experiment::basic_open_loop_input;
use bjsd_core::filter::apply_filter;
use bjsd_core::model::benchmark_model_basic;
use bjsd_core::pem::gn_refine;
use bjsd_core::sd::{sd_estimate, ArxOrder};
use bjsd_core::sim::gen_open_loop;

fn bench_apply_filter(c: &mut Criterion) {
    let model = benchmark_model_basic();
    let ds = gen_open_loop(&model, &basic_open_loop_input(), 10_000, 1).unwrap();
    let g = model.dynamics();
    c.bench_function("apply_filter_n10k", |b| {
        b.iter(|| apply_filter(&g, &ds.u).unwrap())
    });
}

fn bench_fit_arx(c: &mut Criterion) {
    let model = benchmark_model_basic();
    let ds = gen_open_loop(&model, &basic_open_loop_input(), 3000, 1).unwrap();
    c.bench_function("fit_arx_n3000_m50", |b| {
        b.iter(|| fit_arx(&ds.u, &ds.y, 50).unwrap())
    });
}

fn bench_sd_estimate(c: &mut Criterion) {
    let model = benchmark_model_basic();
    let ds = gen_open_loop(&model, &basic_open_loop_input(), 3000, 1).unwrap();
    c.bench_function("sd_estimate_n3000_m50", |b| {
        b.iter(|| sd_estimate(&ds, model.orders(), ArxOrder::Fixed(50)).unwrap())
    });
}

fn bench_gn_refine(c: &mut Criterion) {
    let model = benchmark_model_basic();
    let ds = gen_open_loop(&model, &basic_open_loop_input(), 3000, 1).unwrap();
    let start = sd_estimate(&ds, model.orders(), ArxOrder::Fixed(50)).unwrap();
    c.bench_function("gn_refine_n3000", |b| {
        b.iter_batched(
            || start.theta.clone(),
            |theta| gn_refine(&theta, &ds.u, &ds.y).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn configure() -> Criterion {
    Criterion::default().sample_size(20)
}

criterion_group! {
    name = benches;
    config = configure();
    targets = bench_apply_filter, bench_fit_arx, bench_sd_estimate, bench_gn_refine
}
criterion_main!(benches);
