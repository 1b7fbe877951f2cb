//! Sweep throughput: thread-pool sizes against the same fixed state.
//!
//! With the `parallel` feature disabled the "threads" parameter is inert and
//! every measurement reflects the sequential path, which makes the two
//! builds directly comparable:
//!   cargo bench --bench sweep
//!   cargo bench --bench sweep --no-default-features

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use sdrem::model::{init_state, FeatureMatrix, HyperParams};
use sdrem::randkit::RngStream;
use sdrem::{gibbs, par, synthgen};

fn bench_sweep(c: &mut Criterion) {
    let graph = synthgen::random_graph(2000, 16_000, 7).unwrap();
    let features = FeatureMatrix::empty(graph.n_nodes);
    let hp = HyperParams {
        k: 10,
        l: 3,
        iterations: 2,
        burn_in: 1,
        ..HyperParams::default()
    };
    let stream = RngStream::new(1);
    let state0 = init_state(&graph, &features, &hp, &stream).unwrap();

    let mut group = c.benchmark_group("sweep_n2000_e16k_k10_l3");
    group.sample_size(10);
    for &threads in &[1usize, 2, 4, 8] {
        group.bench_with_input(BenchmarkId::new("threads", threads), &threads, |b, &t| {
            par::with_threads(t, || {
                b.iter(|| {
                    let mut state = state0.clone();
                    gibbs::sweep(&mut state, &graph, &features, &hp, &stream, 0).unwrap()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_sweep);
criterion_main!(benches);
