//! Shared fixtures for the criterion benches.

use phasessl_core::image::GrayImage;

/// Deterministic pseudo-random image without pulling rand into the lib.
pub fn bench_image(w: usize, h: usize, seed: u64) -> GrayImage {
    let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
    let pixels = (0..w * h)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect();
    GrayImage::from_pixels(w, h, pixels).expect("finite")
}
