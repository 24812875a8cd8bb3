use binormal_core::flow::{evolve, FlowConfig, KernelChoice, NonlinearKernel};
use binormal_core::measure::{sample_gamma, MeasureParams};
use binormal_core::{par, C64};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn coefficients(n: usize) -> Vec<C64> {
    (0..2 * n + 1).map(|i| C64::from_polar(1.0 / (1.0 + i as f64), 0.37 * i as f64)).collect()
}

fn kernels(c: &mut Criterion) {
    let mut group = c.benchmark_group("cubic_sum");
    for n in [0usize, 1, 2, 4, 8, 16, 32] {
        let b = coefficients(n);
        let mut out = vec![C64::new(0.0, 0.0); b.len()];
        for (label, choice) in [("direct", KernelChoice::Direct), ("dealiased", KernelChoice::Dealiased)] {
            if choice == KernelChoice::Direct && n > 16 {
                continue;
            }
            let mut k = NonlinearKernel::new(n, choice);
            group.bench_with_input(BenchmarkId::new(label, n), &n, |bench, _| {
                bench.iter(|| k.apply(black_box(1.7), black_box(&b), &mut out))
            });
        }
    }
    group.finish();
}

fn batch(c: &mut Criterion) {
    let states = sample_gamma(&MeasureParams { s: 0.5, m: 1e9, n: 8, seed: 1 }, 16).unwrap().states;
    let cfg = FlowConfig::with_tol(1e-8);
    let one = |i: usize| evolve(&states[i], 10.0, &cfg).unwrap();
    let backend = if par::is_parallel() { "rayon" } else { "fallback" };
    let mut group = c.benchmark_group("batch_evolve_16");
    group.sample_size(10);
    group.bench_function(format!("par_{backend}"), |b| b.iter(|| par::map_indexed(states.len(), one)));
    group.bench_function("sequential", |b| b.iter(|| (0..states.len()).map(one).collect::<Vec<_>>()));
    group.finish();
}

criterion_group!(benches, kernels, batch);
criterion_main!(benches);
