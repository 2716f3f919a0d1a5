//! Parallel vs sequential timings for the per-pixel kernels.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use damburst::canny::{nms, nms_seq};
use damburst::eval::gen_mixed_scene;
use damburst::gradient::{
    haar_gradient, haar_gradient_seq, sobel_gradient, sobel_gradient_seq, BoxWidth,
};
use damburst::raster::to_luminance;

fn bench_kernels(c: &mut Criterion) {
    let raster = gen_mixed_scene(481, 321, 7).expect("scene generation");
    let luminance = to_luminance(&raster);
    let width = BoxWidth::new(5).unwrap();
    let gradient = haar_gradient(&luminance, width);

    let mut group = c.benchmark_group("haar_481x321");
    group.bench_function("parallel", |b| {
        b.iter(|| haar_gradient(black_box(&luminance), black_box(width)))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| haar_gradient_seq(black_box(&luminance), black_box(width)))
    });
    group.finish();

    let mut group = c.benchmark_group("sobel_481x321");
    group.bench_function("parallel", |b| {
        b.iter(|| sobel_gradient(black_box(&luminance)).unwrap())
    });
    group.bench_function("sequential", |b| {
        b.iter(|| sobel_gradient_seq(black_box(&luminance)).unwrap())
    });
    group.finish();

    let mut group = c.benchmark_group("nms_481x321");
    group.bench_function("parallel", |b| b.iter(|| nms(black_box(&gradient))));
    group.bench_function("sequential", |b| b.iter(|| nms_seq(black_box(&gradient))));
    group.finish();
}

criterion_group!(benches, bench_kernels);
criterion_main!(benches);
