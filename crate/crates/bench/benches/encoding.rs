use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use pstr_bench::fixture;
use pstr_core::{construct_bag, encode_query, encode_scene_span};

fn encoders(c: &mut Criterion) {
    let fx = fixture(128);
    let line = &fx.scenes[0].lines[0];
    c.bench_function("encode_query", |b| b.iter(|| encode_query(black_box("partial"), &fx.params)));
    c.bench_function("encode_scene_line", |b| b.iter(|| encode_scene_span(black_box(line), 0.0, 1.0, &fx.params, 0)));
    c.bench_function("construct_bag", |b| b.iter(|| construct_bag(black_box(line), 2, line.len())));
}

criterion_group!(benches, encoders);
criterion_main!(benches);
