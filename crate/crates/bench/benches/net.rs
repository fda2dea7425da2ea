//! Forward and backward cost of the dual-stream classifier.

use criterion::{criterion_group, criterion_main, Criterion};

use phasessl_bench::bench_image;
use phasessl_core::image::MultiFeatureImage;
use phasessl_core::net::{backward, forward, init_params, NetConfig};

fn fixtures() -> (
    phasessl_core::net::ModelParams,
    phasessl_core::image::GrayImage,
    MultiFeatureImage,
) {
    let cfg = NetConfig {
        input_dims: (64, 64),
        init_seed: 9,
        ..NetConfig::default()
    };
    let params = init_params(&cfg).unwrap();
    let cxr = bench_image(64, 64, 4);
    let planes: [Vec<f64>; 3] = std::array::from_fn(|i| {
        bench_image(64, 64, 5 + i as u64)
            .into_pixels()
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect()
    });
    let mf = MultiFeatureImage::from_planes(64, 64, planes).unwrap();
    (params, cxr, mf)
}

fn bench_forward(c: &mut Criterion) {
    let (params, cxr, mf) = fixtures();
    c.bench_function("forward_64x64", |b| {
        b.iter(|| forward(&params, &cxr, &mf).unwrap())
    });
}

fn bench_backward(c: &mut Criterion) {
    let (params, cxr, mf) = fixtures();
    let batch = vec![(&cxr, &mf); 8];
    let labels = vec![1usize; 8];
    c.bench_function("backward_batch8_64x64", |b| {
        b.iter(|| backward(&params, &batch, &labels).unwrap())
    });
}

criterion_group!(benches, bench_forward, bench_backward);
criterion_main!(benches);
