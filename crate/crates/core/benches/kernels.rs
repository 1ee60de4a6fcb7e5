//! Parallel against sequential on the main kernels. "sequential" runs the
//! same chunked code in a one-worker pool; with `--no-default-features` both
//! rows take the sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use gcdlab::bvfun::PeriodicBVFunction;
use gcdlab::discrepancy::SequenceFamily;
use gcdlab::galgen::build_gal_set;
use gcdlab::gcdforms::gcd_form;
use gcdlab::par::{map_chunks, map_chunks_sequential, with_threads, SAMPLE_CHUNK};
use gcdlab::probes::max_statistic_estimate;
use gcdlab::series::{exact_l2_norm_of_sum, monte_carlo_second_moment, IntegerSequence};

fn modes() -> [(&'static str, usize); 2] {
    [("parallel", 0), ("sequential", 1)]
}

fn gcd_form_kernel(c: &mut Criterion) {
    let mut g = c.benchmark_group("gcd_form");
    for psi in [1024u64, 4096] {
        let set = build_gal_set(psi).unwrap().elements;
        for (name, threads) in modes() {
            g.bench_with_input(BenchmarkId::new(name, psi), &set, |b, set| {
                b.iter(|| with_threads(threads, || gcd_form(black_box(set), 0.8).unwrap().value))
            });
        }
    }
    g.finish();
}

fn exact_norm_kernel(c: &mut Criterion) {
    let f = PeriodicBVFunction::sawtooth();
    let seq = IntegerSequence::from_u64(&build_gal_set(256).unwrap().elements).unwrap();
    let mut g = c.benchmark_group("exact_l2_norm");
    g.sample_size(10);
    for (name, threads) in modes() {
        g.bench_function(name, |b| b.iter(|| with_threads(threads, || exact_l2_norm_of_sum(&f, black_box(&seq), None).unwrap().value)));
    }
    g.finish();
}

fn monte_carlo_kernel(c: &mut Criterion) {
    let f = PeriodicBVFunction::sawtooth();
    let seq = IntegerSequence::from_u64(&(1..=512).collect::<Vec<u64>>()).unwrap();
    let mut g = c.benchmark_group("monte_carlo_second_moment");
    g.sample_size(10);
    for (name, threads) in modes() {
        g.bench_function(name, |b| {
            b.iter(|| with_threads(threads, || monte_carlo_second_moment(&f, black_box(&seq), None, 4096, 1).unwrap().mean_square))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("max_statistic");
    g.sample_size(10);
    for (name, threads) in modes() {
        g.bench_function(name, |b| {
            b.iter(|| {
                with_threads(threads, || max_statistic_estimate(&f, &SequenceFamily::Squares, &[1024, 4096], 256, 1).unwrap().c_hat)
            })
        });
    }
    g.finish();
}

/// The chunk helpers themselves on a cheap per-item body.
fn chunk_overhead(c: &mut Criterion) {
    let body = |r: std::ops::Range<usize>| r.map(|i| ((i as f64) * 0.618).fract()).sum::<f64>();
    let mut g = c.benchmark_group("map_chunks");
    g.bench_function("parallel", |b| b.iter(|| map_chunks(black_box(1 << 20), SAMPLE_CHUNK, body)));
    g.bench_function("sequential", |b| b.iter(|| map_chunks_sequential(black_box(1 << 20), SAMPLE_CHUNK, body)));
    g.finish();
}

criterion_group!(benches, gcd_form_kernel, exact_norm_kernel, monte_carlo_kernel, chunk_overhead);
criterion_main!(benches);
