use std::collections::BTreeSet;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use hyperplan_bench::{random_deps, random_graph};
use hyperplan_core::planning::hasse_reduce;
use hyperplan_core::{EntityId, HyperedgeId};

fn neighborhoods(c: &mut Criterion) {
    let mut group = c.benchmark_group("k_hop_neighborhood");
    for edges in [500usize, 5_000] {
        let g = random_graph(7, edges / 2, edges, 5);
        let seeds: BTreeSet<EntityId> = [EntityId(0), EntityId(1)].into();
        for depth in [1usize, 2, 4] {
            group.bench_with_input(
                BenchmarkId::new(format!("{edges} edges"), depth),
                &depth,
                |b, &d| {
                    b.iter(|| {
                        g.k_hop_neighborhood(black_box(&seeds), &BTreeSet::new(), d)
                            .unwrap()
                    })
                },
            );
        }
    }
    group.finish();

    let g = random_graph(8, 2_500, 5_000, 5);
    c.bench_function("neighbors/5000 edges", |b| {
        b.iter(|| g.neighbors(black_box(HyperedgeId(42))).unwrap())
    });
    c.bench_function("induced_subgraph/5000 edges", |b| {
        let keep: BTreeSet<HyperedgeId> = (0..500).map(HyperedgeId).collect();
        b.iter(|| g.induced_subgraph(black_box(&keep)).unwrap())
    });
}

fn reduction(c: &mut Criterion) {
    let mut group = c.benchmark_group("hasse_reduce");
    for n in [6usize, 12, 24] {
        let deps = random_deps(n as u64, n, 0.4);
        group.bench_with_input(BenchmarkId::from_parameter(n), &deps, |b, deps| {
            b.iter(|| hasse_reduce(black_box(deps)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, neighborhoods, reduction);
criterion_main!(benches);
