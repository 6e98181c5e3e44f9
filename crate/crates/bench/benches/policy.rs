use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use netmax_bench::heterogeneous_instance;
use netmax_core::policy::{self, PolicySearch};
use std::hint::black_box;

fn bench_policy(c: &mut Criterion) {
    let mut group = c.benchmark_group("generate_policy_matrix");
    for n in [4, 8, 16] {
        let (topo, times) = heterogeneous_instance(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| policy::generate_policy_matrix(&PolicySearch::default(), black_box(&times), &topo).unwrap())
        });
    }
    group.finish();

    let (topo, times) = heterogeneous_instance(8);
    let search = PolicySearch::default();
    let best = policy::generate_policy_matrix(&search, &times, &topo).unwrap();
    let (alpha, rho, tbar) = (search.alpha, best.rho, best.tbar);
    c.bench_function("solve_policy_lp/8", |b| {
        b.iter(|| policy::solve_policy_lp(alpha, rho, black_box(tbar), &times, &topo, policy::DEFAULT_MARGIN).unwrap())
    });
    let p = policy::solve_policy_lp(alpha, rho, tbar, &times, &topo, policy::DEFAULT_MARGIN).unwrap();
    let y = policy::build_gossip_expectation(&p, alpha, rho, &topo).unwrap();
    c.bench_function("second_largest_eigenvalue/8", |b| b.iter(|| policy::second_largest_eigenvalue(black_box(&y)).unwrap()));
}

criterion_group!(benches, bench_policy);
criterion_main!(benches);
