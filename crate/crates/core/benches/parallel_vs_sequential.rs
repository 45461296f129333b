use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use regret_core::par::{try_map_indexed, try_map_indexed_sequential};
use regret_core::prob::{sample_costs, CostDistribution, CovMatrix, Seed};
use regret_core::problems::{random_lp, KnapsackInstance};
use regret_core::DecisionOracle;

fn solve_all(c: &mut Criterion) {
    let lp = random_lp(10, 5, Seed(1)).unwrap();
    let knap = KnapsackInstance::paper_replication(10, 10.0, Seed(1)).unwrap();
    let dist = CostDistribution::new(vec![0.0; 10], CovMatrix::identity(10)).unwrap();
    let costs = sample_costs(&dist, 2000, Seed(2));

    let mut group = c.benchmark_group("solve_archive");
    group.sample_size(20);
    let oracles: [(&str, &dyn DecisionOracle); 2] = [("lp", &lp), ("knapsack", &knap)];
    for (name, oracle) in oracles {
        group.bench_with_input(BenchmarkId::new("parallel", name), &costs, |b, costs| {
            b.iter(|| {
                try_map_indexed(costs.n_rows(), |i| oracle.solve(costs.row(i)))
                    .map(|v| black_box(v.len()))
                    .unwrap()
            })
        });
        group.bench_with_input(BenchmarkId::new("sequential", name), &costs, |b, costs| {
            b.iter(|| {
                try_map_indexed_sequential(costs.n_rows(), |i| oracle.solve(costs.row(i)))
                    .map(|v| black_box(v.len()))
                    .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, solve_all);
criterion_main!(benches);
