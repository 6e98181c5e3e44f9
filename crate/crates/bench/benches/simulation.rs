use criterion::{criterion_group, criterion_main, Criterion};
use netmax_bench::short_run_config;
use netmax_core::config::Protocol;
use netmax_core::sim;

fn bench_simulation(c: &mut Criterion) {
    let cfg = short_run_config(100.0);
    let mut group = c.benchmark_group("run_100s");
    group.sample_size(20);
    for protocol in [Protocol::Netmax, Protocol::UniformAsync, Protocol::SyncAllreduce] {
        group.bench_function(protocol.name(), |b| b.iter(|| sim::run(&cfg, protocol, 0).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_simulation);
criterion_main!(benches);
