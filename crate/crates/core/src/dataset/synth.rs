//! Procedural three-class corpus for desk-scale experiments.
//!
//! Class 0 is a smooth low-frequency background; class 1 adds a few large
//! high-contrast elliptical consolidations; class 2 adds many small
//! bilateral peripheral low-contrast opacities. Intensity budgets keep the
//! classes separable by a bright-area threshold, which is what makes the
//! downstream learning experiments meaningful rather than vacuous.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, SampleRecord, DEFAULT_CLASSES};
use crate::error::{Error, Result};
use crate::image::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub per_class: usize,
    pub dims: (usize, usize),
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            per_class: 300,
            dims: (64, 64),
            seed: 0,
        }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Renders one corpus image. Deterministic in (spec.seed, class, index)
/// alone, so generation order or threading cannot change pixels.
pub fn synth_image(spec: &SynthSpec, class: usize, index: usize) -> GrayImage {
    let (w, h) = spec.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(
        spec.seed ^ splitmix((class * spec.per_class + index) as u64 + 1),
    );
    let mut pixels = vec![0.0f64; w * h];

    // Smooth background in [0.21, 0.35]: three low-frequency cosines.
    let mut waves = Vec::new();
    let mut amp_budget = 0.07;
    for k in 0..3 {
        let amp = if k == 2 {
            amp_budget
        } else {
            rng.gen_range(0.2..0.5) * amp_budget
        };
        amp_budget -= amp;
        let cycles = rng.gen_range(0.5..1.5);
        let angle = rng.gen_range(0.0..PI);
        let phase = rng.gen_range(0.0..2.0 * PI);
        waves.push((amp, cycles, angle, phase));
    }
    for y in 0..h {
        for x in 0..w {
            let mut v = 0.28;
            for (amp, cycles, angle, phase) in &waves {
                let t = (x as f64 * angle.cos() + y as f64 * angle.sin()) / w as f64;
                v += amp * (2.0 * PI * cycles * t + phase).cos();
            }
            pixels[y * w + x] = v;
        }
    }

    // soft-edged additive disk/ellipse
    let stamp = |pixels: &mut Vec<f64>, cx: f64, cy: f64, ax: f64, ay: f64, amp: f64| {
        for y in 0..h {
            for x in 0..w {
                let dx = (x as f64 - cx) / ax;
                let dy = (y as f64 - cy) / ay;
                let r = (dx * dx + dy * dy).sqrt();
                // radial smoothstep: 1 inside, 0 past the rim
                let edge = 1.0 / ax.min(ay); // ~1px transition
                let t = ((1.0 + edge - r) / (2.0 * edge)).clamp(0.0, 1.0);
                let mask = t * t * (3.0 - 2.0 * t);
                pixels[y * w + x] += amp * mask;
            }
        }
    };

    match class {
        0 => {}
        1 => {
            // 1-2 large high-contrast consolidations; the bright-area range
            // deliberately overlaps class 2, so scale (not total area) is
            // what separates them
            let count = if rng.gen_range(0.0..1.0) < 0.67 { 1 } else { 2 };
            for _ in 0..count {
                let cx = rng.gen_range(0.3..0.7) * w as f64;
                let cy = rng.gen_range(0.3..0.7) * h as f64;
                let ax = rng.gen_range(0.09..0.18) * w as f64;
                let ay = rng.gen_range(0.07..0.14) * h as f64;
                let amp = rng.gen_range(0.36..0.48);
                stamp(&mut pixels, cx, cy, ax, ay, amp);
            }
        }
        2 => {
            // 3-7 small low-contrast opacities per side, mirrored pairs
            let pairs = rng.gen_range(3..=7);
            for _ in 0..pairs {
                let cx = rng.gen_range(0.10..0.32) * w as f64;
                let cy = rng.gen_range(0.12..0.88) * h as f64;
                let r = rng.gen_range(1.6..3.0);
                let amp = rng.gen_range(0.26..0.36);
                stamp(&mut pixels, cx, cy, r, r, amp);
                let jitter = rng.gen_range(-1.5..1.5);
                stamp(&mut pixels, w as f64 - 1.0 - cx, cy + jitter, r, r, amp);
            }
        }
        _ => unreachable!("three classes"),
    }

    // additive Gaussian noise, sigma 0.03 (Box-Muller on the seeded stream)
    let mut i = 0;
    while i < pixels.len() {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let mag = (-2.0 * u1.ln()).sqrt();
        pixels[i] += 0.03 * mag * (2.0 * PI * u2).cos();
        if i + 1 < pixels.len() {
            pixels[i + 1] += 0.03 * mag * (2.0 * PI * u2).sin();
        }
        i += 2;
    }
    for p in pixels.iter_mut() {
        *p = p.clamp(0.0, 1.0);
    }
    GrayImage::from_pixels(w, h, pixels).expect("finite by construction")
}

/// Writes `3 * per_class` 16-bit PNGs plus `manifest.csv` under `out_dir`
/// and returns the manifest. One subject per scan.
pub fn generate_synthetic(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    if spec.per_class == 0 {
        return Err(Error::InvalidConfig("per_class must be >= 1".into()));
    }
    let out_dir = out_dir.as_ref();
    let image_dir = out_dir.join("images");
    std::fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;

    let mut records = Vec::with_capacity(3 * spec.per_class);
    for class in 0..3 {
        for i in 0..spec.per_class {
            let id = format!("c{class}_{i:04}");
            let rel = format!("images/{id}.png");
            synth_image(spec, class, i).save_png16(out_dir.join(&rel))?;
            records.push(SampleRecord {
                sample_id: id.clone(),
                image_path: rel.into(),
                label: Some(class),
                subject_id: format!("s_{id}"),
            });
        }
    }
    let manifest = DatasetManifest::new(
        records,
        DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(),
    )?;
    // the CSV keeps relocatable relative paths; the returned manifest gets
    // them resolved against out_dir, ready for immediate loading
    crate::dataset::save_manifest(&manifest, out_dir.join("manifest.csv"))?;
    crate::dataset::load_manifest(out_dir.join("manifest.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(per_class: usize) -> SynthSpec {
        SynthSpec {
            per_class,
            dims: (64, 64),
            seed: 13,
        }
    }

    /// Count 4-connected components above a brightness threshold.
    fn bright_components(img: &GrayImage, threshold: f64) -> usize {
        let (w, h) = (img.width(), img.height());
        let mut visited = vec![false; w * h];
        let mut count = 0;
        for start in 0..w * h {
            if visited[start] || img.pixels()[start] <= threshold {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            visited[start] = true;
            while let Some(i) = stack.pop() {
                let (x, y) = (i % w, i / w);
                let mut push = |nx: usize, ny: usize, stack: &mut Vec<usize>| {
                    let j = ny * w + nx;
                    if !visited[j] && img.pixels()[j] > threshold {
                        visited[j] = true;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    push(x - 1, y, &mut stack);
                }
                if x + 1 < w {
                    push(x + 1, y, &mut stack);
                }
                if y > 0 {
                    push(x, y - 1, &mut stack);
                }
                if y + 1 < h {
                    push(x, y + 1, &mut stack);
                }
            }
        }
        count
    }

    #[test]
    fn manifest_has_per_class_counts() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_synthetic(&spec(10), dir.path()).unwrap();
        assert_eq!(m.records.len(), 30);
        for class in 0..3 {
            assert_eq!(
                m.records.iter().filter(|r| r.label == Some(class)).count(),
                10
            );
        }
        assert!(dir.path().join("images/c2_0009.png").exists());
        assert!(dir.path().join("manifest.csv").exists());
    }

    #[test]
    fn rejects_zero_per_class() {
        let dir = tempfile::tempdir().unwrap();
        let bad = SynthSpec {
            per_class: 0,
            ..spec(1)
        };
        assert!(generate_synthetic(&bad, dir.path()).is_err());
    }

    #[test]
    fn same_seed_same_pixels() {
        let a = synth_image(&spec(10), 1, 3);
        let b = synth_image(&spec(10), 1, 3);
        assert_eq!(a, b);
        let c = synth_image(&spec(10), 1, 4);
        assert_ne!(a, c);
    }

    #[test]
    fn class2_has_strictly_more_bright_components_than_class0() {
        let s = spec(12);
        let max_c0 = (0..12)
            .map(|i| bright_components(&synth_image(&s, 0, i), 0.5))
            .max()
            .unwrap();
        let min_c2 = (0..12)
            .map(|i| bright_components(&synth_image(&s, 2, i), 0.5))
            .min()
            .unwrap();
        assert!(
            min_c2 > max_c0,
            "class2 min {min_c2} must exceed class0 max {max_c0}"
        );
    }

    #[test]
    fn threshold_and_label_classifier_clears_80_percent() {
        // trivial two-feature rule: bright area says lesion vs none,
        // component count says few-large vs many-small
        let s = spec(25);
        let mut correct = 0;
        let mut total = 0;
        for class in 0..3 {
            for i in 0..25 {
                let img = synth_image(&s, class, i);
                let area = img.pixels().iter().filter(|p| **p > 0.5).count();
                let components = bright_components(&img, 0.5);
                let predicted = if area < 30 {
                    0
                } else if components <= 3 {
                    1
                } else {
                    2
                };
                total += 1;
                if predicted == class {
                    correct += 1;
                }
            }
        }
        let accuracy = correct as f64 / total as f64;
        assert!(accuracy > 0.8, "trivial classifier accuracy {accuracy}");
    }
}
