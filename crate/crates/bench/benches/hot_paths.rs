use std::collections::HashSet;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scalegraph::ident::IdSpace;
use scalegraph::routing::{oracle_closest, TableNetwork, DEFAULT_ALPHA, DEFAULT_K_BUCKET};
use scalegraph::security_sim::{
    hypergeometric_p, run_experiment, ExperimentConfig, FModel, Fraction, ShardSet, SortedIds,
};

fn closest_ranges(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let keys: Vec<u64> = (0..4000).map(|_| rng.gen()).collect();
    let ids = SortedIds::new(keys, 64);
    let targets: Vec<u64> = (0..1024).map(|_| rng.gen()).collect();
    let mut group = c.benchmark_group("closest_ranges");
    for r in [21usize, 61, 101] {
        group.bench_with_input(BenchmarkId::from_parameter(r), &r, |b, &r| {
            let mut out = Vec::new();
            let mut i = 0;
            b.iter(|| {
                out.clear();
                ids.closest_ranges(targets[i & 1023], r, &mut out);
                i += 1;
                black_box(out.len())
            })
        });
    }
    group.finish();
}

fn any_reaches(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let shards = ShardSet::random(&mut rng, 64, 2000, 4000, 61);
    let mut prefix = vec![0u32; 2001];
    for i in 0..2000 {
        prefix[i + 1] = prefix[i] + u32::from(rng.gen_bool(0.25));
    }
    c.bench_function("any_reaches/N2000_m4000_r61", |b| {
        b.iter(|| black_box(shards.any_reaches(black_box(&prefix), 31)))
    });
}

fn experiment(c: &mut Criterion) {
    let f: Fraction = "1/4".parse().unwrap();
    let cfg = ExperimentConfig {
        repetitions: 2,
        iterations: 256,
        ..ExperimentConfig::new(1000, 61, f, FModel::OneHalf, 3)
    };
    let mut group = c.benchmark_group("run_experiment");
    group.sample_size(10);
    group.bench_function("N1000_r61_2x256", |b| {
        b.iter(|| black_box(run_experiment(&cfg).unwrap()))
    });
    group.finish();
}

fn lookup(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let space = IdSpace::default();
    let nodes = space.random_distinct(&mut rng, 1000, &mut HashSet::new());
    let mut net = TableNetwork::fully_populated(&nodes, DEFAULT_K_BUCKET, DEFAULT_ALPHA, &mut rng);
    let targets: Vec<_> = (0..256).map(|_| space.random(&mut rng)).collect();
    let mut i = 0;
    c.bench_function("lookup/N1000_r20", |b| {
        b.iter(|| {
            let from = nodes[i % nodes.len()];
            let out = net.lookup(&from, &targets[i & 255], 20, true).unwrap();
            i += 1;
            black_box(out.rounds)
        })
    });
    c.bench_function("oracle_closest/N1000_r20", |b| {
        b.iter(|| black_box(oracle_closest(&nodes, &targets[0], 20)))
    });
}

fn hypergeometric(c: &mut Criterion) {
    let mut group = c.benchmark_group("hypergeometric_p");
    for (n, b, r) in [
        (100usize, 25usize, 21usize),
        (4000, 1000, 61),
        (4000, 1000, 521),
    ] {
        group.bench_function(format!("N{n}_b{b}_r{r}"), |bench| {
            bench.iter(|| black_box(hypergeometric_p(n, b, r, FModel::OneHalf)))
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    closest_ranges,
    any_reaches,
    experiment,
    lookup,
    hypergeometric
);
criterion_main!(benches);
