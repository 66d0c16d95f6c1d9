use criterion::{criterion_group, criterion_main, Criterion};

use sbdc_bench::example;
use sbdc_core::{run, RunOptions};

fn engine(c: &mut Criterion) {
    let s = example(900.0);
    let mut g = c.benchmark_group("engine");
    g.sample_size(10);
    g.bench_function("example_15min", |b| {
        b.iter(|| run(&s, &RunOptions::default()).unwrap().summary.metrics.completed)
    });
    g.finish();
}

criterion_group!(benches, engine);
criterion_main!(benches);
