//! Thin 2-D FFT layer over rustfft.
//!
//! Transforms are unnormalized on the forward pass; the inverse divides by
//! `width * height` so a forward/inverse pair is the identity. Mixed-radix
//! plans make non-power-of-two dims exact, no padding involved.

use rustfft::num_complex::Complex;
use rustfft::{FftDirection, FftPlanner};

/// Row-major complex grid with its dims, the working buffer of the
/// frequency-domain pipeline.
#[derive(Debug, Clone)]
pub struct ComplexGrid {
    pub width: usize,
    pub height: usize,
    pub values: Vec<Complex<f64>>,
}

impl ComplexGrid {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![Complex::new(0.0, 0.0); width * height],
        }
    }

    pub fn from_real(width: usize, height: usize, real: &[f64]) -> Self {
        debug_assert_eq!(real.len(), width * height);
        Self {
            width,
            height,
            values: real.iter().map(|&r| Complex::new(r, 0.0)).collect(),
        }
    }

    pub fn real_part(&self) -> Vec<f64> {
        self.values.iter().map(|c| c.re).collect()
    }

    /// Largest |Im| over the grid, for residue checks after inverse
    /// transforms of conjugate-symmetric spectra.
    pub fn max_imag_abs(&self) -> f64 {
        self.values.iter().map(|c| c.im.abs()).fold(0.0, f64::max)
    }

    pub fn mul_assign_elementwise(&mut self, other: &ComplexGrid) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a *= b;
        }
    }
}

fn transform(grid: &mut ComplexGrid, direction: FftDirection) {
    let (w, h) = (grid.width, grid.height);
    let mut planner = FftPlanner::new();

    // Rows first: contiguous in row-major layout.
    let row_fft = planner.plan_fft(w, direction);
    let mut scratch = vec![Complex::new(0.0, 0.0); row_fft.get_inplace_scratch_len()];
    for row in grid.values.chunks_exact_mut(w) {
        row_fft.process_with_scratch(row, &mut scratch);
    }

    // Columns via transpose, FFT, transpose back.
    let mut transposed = vec![Complex::new(0.0, 0.0); w * h];
    for y in 0..h {
        for x in 0..w {
            transposed[x * h + y] = grid.values[y * w + x];
        }
    }
    let col_fft = planner.plan_fft(h, direction);
    scratch.resize(col_fft.get_inplace_scratch_len(), Complex::new(0.0, 0.0));
    for col in transposed.chunks_exact_mut(h) {
        col_fft.process_with_scratch(col, &mut scratch);
    }
    for x in 0..w {
        for y in 0..h {
            grid.values[y * w + x] = transposed[x * h + y];
        }
    }
}

/// In-place forward 2-D FFT (unnormalized).
pub fn fft2(grid: &mut ComplexGrid) {
    transform(grid, FftDirection::Forward);
}

/// In-place inverse 2-D FFT, normalized by `1 / (width * height)`.
pub fn ifft2(grid: &mut ComplexGrid) {
    transform(grid, FftDirection::Inverse);
    let scale = 1.0 / (grid.width * grid.height) as f64;
    for v in grid.values.iter_mut() {
        *v *= scale;
    }
}

/// Normalized frequency (cycles/pixel) of FFT bin `k` along an axis of
/// length `n`: `k/n` for the first half, wrapped negative for the second.
#[inline]
pub fn bin_frequency(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64 / n as f64
    } else {
        (k as f64 - n as f64) / n as f64
    }
}

/// Whether bin `k` is its own conjugate mirror along an axis of length `n`
/// (DC always; the Nyquist bin when `n` is even).
#[inline]
pub fn is_self_mirror(k: usize, n: usize) -> bool {
    k == 0 || (n.is_multiple_of(2) && k == n / 2)
}
