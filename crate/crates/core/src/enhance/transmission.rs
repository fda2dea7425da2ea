//! Transmission-map estimation behind the attenuation-corrected energy
//! image: airlight from the top LPE quantile, a dark-channel style
//! initialization, and a weighted-L1 contextual refinement solved by
//! half-quadratic splitting with an FFT-diagonal quadratic step.

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::enhance::fft::{fft2, ifft2, ComplexGrid};
use crate::enhance::phase::EnergyImage;
use crate::error::{Error, Result};

/// Per-pixel transmission/attenuation factor, each value in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct AttenuationImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

/// Free parameters of the weighted-L1 transmission solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizerConfig {
    /// Data-fidelity weight.
    pub lambda: f64,
    /// Initial half-quadratic penalty.
    pub beta0: f64,
    /// Penalty cap; iteration stops once the schedule passes it.
    pub beta_max: f64,
    /// Penalty growth factor per outer iteration.
    pub kappa: f64,
    /// Bandwidth of the edge-aware weights.
    pub edge_sigma: f64,
    /// Number of first-difference stencils (compass directions).
    pub num_directions: usize,
    /// Minimum admissible transmission.
    pub t_floor: f64,
    /// Fraction of brightest pixels averaged into the airlight.
    pub airlight_fraction: f64,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            lambda: 2.0,
            beta0: 1.0,
            beta_max: 256.0,
            kappa: 2.0 * 2.0f64.sqrt(),
            edge_sigma: 0.5,
            num_directions: 8,
            t_floor: 0.1,
            airlight_fraction: 0.001,
        }
    }
}

impl RegularizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda <= 0.0 {
            return Err(Error::InvalidConfig("lambda must be > 0".into()));
        }
        if self.beta0 <= 0.0 || self.beta0 >= self.beta_max {
            return Err(Error::InvalidConfig("need 0 < beta0 < beta_max".into()));
        }
        if self.kappa <= 1.0 {
            return Err(Error::InvalidConfig("kappa must be > 1".into()));
        }
        if self.edge_sigma <= 0.0 {
            return Err(Error::InvalidConfig("edge_sigma must be > 0".into()));
        }
        if self.num_directions == 0 || self.num_directions > COMPASS.len() {
            return Err(Error::InvalidConfig(format!(
                "num_directions must be in 1..={}",
                COMPASS.len()
            )));
        }
        if !(0.0 < self.t_floor && self.t_floor < 1.0) {
            return Err(Error::InvalidConfig("t_floor must be in (0,1)".into()));
        }
        if !(0.0 < self.airlight_fraction && self.airlight_fraction < 1.0) {
            return Err(Error::InvalidConfig(
                "airlight_fraction must be in (0,1)".into(),
            ));
        }
        Ok(())
    }
}

/// The eight compass first-difference offsets, in fixed order.
const COMPASS: [(isize, isize); 8] = [
    (1, 0),
    (0, 1),
    (1, 1),
    (1, -1),
    (-1, 0),
    (0, -1),
    (-1, -1),
    (-1, 1),
];

/// Airlight estimate: mean of the top `airlight_fraction` quantile of the
/// energy image, ties broken by ascending pixel index.
pub fn estimate_airlight(lpe_img: &EnergyImage, cfg: &RegularizerConfig) -> Result<f64> {
    cfg.validate()?;
    let n = lpe_img.values.len();
    if n == 0 {
        return Err(Error::EmptyInput("empty energy image".into()));
    }
    let take = ((cfg.airlight_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    // descending by value, ascending by index among ties
    order.sort_by(|&a, &b| {
        lpe_img.values[b]
            .partial_cmp(&lpe_img.values[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let sum: f64 = order[..take].iter().map(|&i| lpe_img.values[i]).sum();
    Ok(sum / take as f64)
}

/// Dark-channel style initialization:
/// `T = clamp(1 - 0.95 * minfilter_7x7(LPE / A), t_floor, 1)`.
///
/// An all-zero energy image (A = 0) yields the all-ones map.
pub fn initial_transmission(
    lpe_img: &EnergyImage,
    airlight: f64,
    cfg: &RegularizerConfig,
) -> Result<AttenuationImage> {
    cfg.validate()?;
    let (w, h) = (lpe_img.width, lpe_img.height);
    if airlight <= 0.0 {
        if lpe_img.values.iter().any(|v| *v != 0.0) {
            return Err(Error::InvalidConfig(
                "airlight must be > 0 for a non-zero energy image".into(),
            ));
        }
        return Ok(AttenuationImage {
            width: w,
            height: h,
            values: vec![1.0; w * h],
        });
    }
    const OMEGA: f64 = 0.95;
    const RADIUS: isize = 3; // 7x7 patch
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut m = f64::INFINITY;
            for dy in -RADIUS..=RADIUS {
                for dx in -RADIUS..=RADIUS {
                    let (px, py) = (x + dx, y + dy);
                    if px >= 0 && py >= 0 && px < w as isize && py < h as isize {
                        m = m.min(lpe_img.values[py as usize * w + px as usize] / airlight);
                    }
                }
            }
            values.push((1.0 - OMEGA * m).clamp(cfg.t_floor, 1.0));
        }
    }
    Ok(AttenuationImage {
        width: w,
        height: h,
        values,
    })
}

/// Scalar soft-threshold: `sign(x) * max(|x| - threshold, 0)`.
#[inline]
pub fn shrink(x: f64, threshold: f64) -> f64 {
    let mag = x.abs() - threshold;
    if mag > 0.0 {
        mag.copysign(x)
    } else {
        0.0
    }
}

/// One outer iteration of the solver trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverStep {
    pub beta: f64,
    /// Weighted-L1 objective after this iteration's quadratic step.
    pub objective: f64,
}

/// Refines the initial transmission by minimizing
/// `lambda/2 ||T - T_hat||^2 + sum_j ||W_j . (D_j x T)||_1`
/// with half-quadratic splitting. Returns the clamped solution and the
/// per-iteration objective trace (the trace starts at the initializer).
pub fn solve_transmission_with_trace(
    t_hat: &AttenuationImage,
    guide: &EnergyImage,
    cfg: &RegularizerConfig,
) -> Result<(AttenuationImage, Vec<SolverStep>)> {
    cfg.validate()?;
    let (w, h) = (t_hat.width, t_hat.height);
    if guide.width != w || guide.height != h {
        return Err(Error::DimMismatch {
            expected_w: w,
            expected_h: h,
            got_w: guide.width,
            got_h: guide.height,
        });
    }
    let n = w * h;
    let dirs = &COMPASS[..cfg.num_directions];

    // Edge-aware weights from the guide image.
    let weights: Vec<Vec<f64>> = dirs
        .iter()
        .map(|&d| {
            let diff = directional_diff(&guide.values, w, h, d);
            diff.iter()
                .map(|g| (-(g * g) / (2.0 * cfg.edge_sigma * cfg.edge_sigma)).exp())
                .collect()
        })
        .collect();

    // Frequency-domain difference multipliers and the quadratic denominator.
    let multipliers: Vec<Vec<Complex<f64>>> = dirs
        .iter()
        .map(|&d| difference_multiplier(w, h, d))
        .collect();
    let mut spectrum_t_hat = ComplexGrid::from_real(w, h, &t_hat.values);
    fft2(&mut spectrum_t_hat);

    let objective = |t: &[f64]| -> f64 {
        let fidelity: f64 = t
            .iter()
            .zip(&t_hat.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let mut reg = 0.0;
        for (j, &d) in dirs.iter().enumerate() {
            let diff = directional_diff(t, w, h, d);
            reg += diff
                .iter()
                .zip(&weights[j])
                .map(|(x, wj)| wj * x.abs())
                .sum::<f64>();
        }
        cfg.lambda / 2.0 * fidelity + reg
    };

    let mut t = t_hat.values.clone();
    let mut trace = vec![SolverStep {
        beta: 0.0,
        objective: objective(&t),
    }];

    let mut beta = cfg.beta0;
    while beta <= cfg.beta_max {
        // Z-step: soft-threshold the weighted differences.
        // T-step: FFT-diagonal solve of the coupled quadratic.
        let mut numerator: Vec<Complex<f64>> = spectrum_t_hat
            .values
            .iter()
            .map(|v| v * cfg.lambda)
            .collect();
        for (j, &d) in dirs.iter().enumerate() {
            let diff = directional_diff(&t, w, h, d);
            let z: Vec<f64> = diff
                .iter()
                .zip(&weights[j])
                .map(|(x, wj)| shrink(*x, wj / beta))
                .collect();
            let mut spectrum_z = ComplexGrid::from_real(w, h, &z);
            fft2(&mut spectrum_z);
            for i in 0..n {
                numerator[i] += multipliers[j][i].conj() * spectrum_z.values[i] * beta;
            }
        }
        let mut solved = ComplexGrid {
            width: w,
            height: h,
            values: (0..n)
                .map(|i| {
                    let denom = cfg.lambda
                        + beta
                            * multipliers
                                .iter()
                                .map(|m| m[i].norm_sqr())
                                .sum::<f64>();
                    numerator[i] / denom
                })
                .collect(),
        };
        ifft2(&mut solved);
        t = solved.real_part();

        trace.push(SolverStep {
            beta,
            objective: objective(&t),
        });
        beta *= cfg.kappa;
    }

    let values = t
        .iter()
        .map(|v| v.clamp(cfg.t_floor, 1.0))
        .collect();
    Ok((
        AttenuationImage {
            width: w,
            height: h,
            values,
        },
        trace,
    ))
}

/// [`solve_transmission_with_trace`] without the trace.
pub fn solve_transmission(
    t_hat: &AttenuationImage,
    guide: &EnergyImage,
    cfg: &RegularizerConfig,
) -> Result<AttenuationImage> {
    solve_transmission_with_trace(t_hat, guide, cfg).map(|(t, _)| t)
}

/// Circular first difference `T(x + d) - T(x)`.
fn directional_diff(values: &[f64], w: usize, h: usize, d: (isize, isize)) -> Vec<f64> {
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let nx = (x as isize + d.0).rem_euclid(w as isize) as usize;
            let ny = (y as isize + d.1).rem_euclid(h as isize) as usize;
            out.push(values[ny * w + nx] - values[y * w + x]);
        }
    }
    out
}

/// DFT multiplier of the circular difference operator for offset `d`:
/// `exp(2 pi i (kx dx / w + ky dy / h)) - 1`.
fn difference_multiplier(w: usize, h: usize, d: (isize, isize)) -> Vec<Complex<f64>> {
    let mut out = Vec::with_capacity(w * h);
    for ky in 0..h {
        for kx in 0..w {
            let angle = 2.0 * std::f64::consts::PI
                * (kx as f64 * d.0 as f64 / w as f64 + ky as f64 * d.1 as f64 / h as f64);
            out.push(Complex::from_polar(1.0, angle) - Complex::new(1.0, 0.0));
        }
    }
    out
}

/// Attenuation-corrected energy image under the model
/// `LPE = ELEA * T + (1 - T) * A`, with LPE and A rescaled by the image's
/// peak energy:
/// `ELEA = clamp((LPE_n - (1 - T) A_n) / max(T, t_floor), 0, 1)`.
pub fn elea(
    lpe_img: &EnergyImage,
    transmission: &AttenuationImage,
    airlight: f64,
    cfg: &RegularizerConfig,
) -> Result<AttenuationImage> {
    cfg.validate()?;
    let (w, h) = (lpe_img.width, lpe_img.height);
    if transmission.width != w || transmission.height != h {
        return Err(Error::DimMismatch {
            expected_w: w,
            expected_h: h,
            got_w: transmission.width,
            got_h: transmission.height,
        });
    }
    let peak = lpe_img.max_value();
    if peak <= 0.0 {
        return Ok(AttenuationImage {
            width: w,
            height: h,
            values: vec![0.0; w * h],
        });
    }
    let a_norm = airlight / peak;
    let values = lpe_img
        .values
        .iter()
        .zip(&transmission.values)
        .map(|(lpe_v, t)| {
            let lpe_n = lpe_v / peak;
            ((lpe_n - (1.0 - t) * a_norm) / t.max(cfg.t_floor)).clamp(0.0, 1.0)
        })
        .collect();
    Ok(AttenuationImage {
        width: w,
        height: h,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn energy(w: usize, h: usize, values: Vec<f64>) -> EnergyImage {
        EnergyImage {
            width: w,
            height: h,
            values,
        }
    }

    #[test]
    fn airlight_of_constant_image_is_that_constant() {
        let img = energy(10, 10, vec![5.0; 100]);
        let a = estimate_airlight(&img, &RegularizerConfig::default()).unwrap();
        assert_eq!(a, 5.0);
    }

    #[test]
    fn airlight_top_two_pixels() {
        let mut values = vec![0.0; 100];
        values[17] = 10.0;
        values[63] = 10.0;
        let cfg = RegularizerConfig {
            airlight_fraction: 0.02,
            ..RegularizerConfig::default()
        };
        let a = estimate_airlight(&energy(10, 10, values), &cfg).unwrap();
        assert_eq!(a, 10.0);
    }

    #[test]
    fn airlight_of_ramp_is_top_quantile_mean() {
        let values: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let cfg = RegularizerConfig {
            airlight_fraction: 0.05,
            ..RegularizerConfig::default()
        };
        let a = estimate_airlight(&energy(10, 10, values), &cfg).unwrap();
        assert_eq!(a, 98.0); // mean of {96..100}
    }

    #[test]
    fn airlight_all_zero_is_zero() {
        let a = estimate_airlight(&energy(4, 4, vec![0.0; 16]), &RegularizerConfig::default())
            .unwrap();
        assert_eq!(a, 0.0);
    }

    #[test]
    fn initial_transmission_saturates_on_uniform_energy() {
        let cfg = RegularizerConfig {
            t_floor: 0.05,
            ..RegularizerConfig::default()
        };
        let img = energy(12, 12, vec![3.0; 144]);
        let t = initial_transmission(&img, 3.0, &cfg).unwrap();
        for v in &t.values {
            assert!((v - 0.05).abs() < 1e-12);
        }
    }

    #[test]
    fn initial_transmission_of_zero_energy_is_ones() {
        let img = energy(6, 6, vec![0.0; 36]);
        let t = initial_transmission(&img, 0.0, &RegularizerConfig::default()).unwrap();
        assert!(t.values.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn initial_transmission_matches_bruteforce_min_filter() {
        let (w, h) = (9, 9);
        let values: Vec<f64> = (0..81).map(|i| (i % 13) as f64 * 0.37 + 0.2).collect();
        let img = energy(w, h, values.clone());
        let a = 4.0;
        let cfg = RegularizerConfig::default();
        let t = initial_transmission(&img, a, &cfg).unwrap();
        // brute force at (4,4): full 7x7 window
        let mut m = f64::INFINITY;
        for y in 1..=7 {
            for x in 1..=7 {
                m = m.min(values[y * w + x] / a);
            }
        }
        let expect = (1.0 - 0.95 * m).clamp(cfg.t_floor, 1.0);
        assert!((t.values[4 * w + 4] - expect).abs() < 1e-12);
        // and at the corner (0,0): truncated window
        let mut m = f64::INFINITY;
        for y in 0..=3 {
            for x in 0..=3 {
                m = m.min(values[y * w + x] / a);
            }
        }
        let expect = (1.0 - 0.95 * m).clamp(cfg.t_floor, 1.0);
        assert!((t.values[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn shrink_closed_forms() {
        assert_eq!(shrink(1.5, 1.0), 0.5);
        assert_eq!(shrink(-0.3, 1.0), 0.0);
        assert_eq!(shrink(-2.0, 0.5), -1.5);
        assert_eq!(shrink(0.0, 1.0), 0.0);
    }

    fn random_problem(seed: u64, w: usize, h: usize) -> (AttenuationImage, EnergyImage) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t_hat = AttenuationImage {
            width: w,
            height: h,
            values: (0..w * h).map(|_| rng.gen_range(0.1..1.0)).collect(),
        };
        let guide = energy(w, h, (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect());
        (t_hat, guide)
    }

    #[test]
    fn huge_lambda_recovers_initializer() {
        let (t_hat, guide) = random_problem(9, 16, 16);
        let cfg = RegularizerConfig {
            lambda: 1e8,
            ..RegularizerConfig::default()
        };
        let t = solve_transmission(&t_hat, &guide, &cfg).unwrap();
        for (a, b) in t.values.iter().zip(&t_hat.values) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn objective_trace_is_non_increasing() {
        for seed in 0..5 {
            let (t_hat, guide) = random_problem(seed, 16, 16);
            let cfg = RegularizerConfig::default();
            let (_, trace) = solve_transmission_with_trace(&t_hat, &guide, &cfg).unwrap();
            assert!(trace.len() >= 2);
            for pair in trace.windows(2) {
                assert!(
                    pair[1].objective <= pair[0].objective + 1e-10,
                    "seed {seed}: {} -> {}",
                    pair[0].objective,
                    pair[1].objective
                );
            }
        }
    }

    #[test]
    fn beta_schedule_is_fixed_and_reported() {
        let (t_hat, guide) = random_problem(2, 8, 8);
        let cfg = RegularizerConfig::default();
        let (_, trace) = solve_transmission_with_trace(&t_hat, &guide, &cfg).unwrap();
        let betas: Vec<f64> = trace[1..].iter().map(|s| s.beta).collect();
        assert_eq!(betas.len(), 6); // 1, 2.83, 8, 22.6, 64, 181 <= 256
        assert_eq!(betas[0], 1.0);
        for pair in betas.windows(2) {
            assert!((pair[1] / pair[0] - cfg.kappa).abs() < 1e-12);
        }
        assert!(*betas.last().unwrap() <= cfg.beta_max);
    }

    #[test]
    fn solution_respects_bounds() {
        let (t_hat, guide) = random_problem(33, 12, 10);
        let cfg = RegularizerConfig::default();
        let t = solve_transmission(&t_hat, &guide, &cfg).unwrap();
        for v in &t.values {
            assert!(*v >= cfg.t_floor && *v <= 1.0);
        }
    }

    #[test]
    fn elea_with_full_transmission_is_normalized_energy() {
        let img = energy(4, 4, (0..16).map(|i| i as f64).collect());
        let t = AttenuationImage {
            width: 4,
            height: 4,
            values: vec![1.0; 16],
        };
        let out = elea(&img, &t, 7.0, &RegularizerConfig::default()).unwrap();
        for (o, v) in out.values.iter().zip(&img.values) {
            assert!((o - v / 15.0).abs() < 1e-12);
        }
    }

    #[test]
    fn elea_of_zero_energy_is_zero() {
        let img = energy(4, 4, vec![0.0; 16]);
        let t = AttenuationImage {
            width: 4,
            height: 4,
            values: vec![0.5; 16],
        };
        let out = elea(&img, &t, 0.0, &RegularizerConfig::default()).unwrap();
        assert!(out.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn elea_single_pixel_arithmetic() {
        // LPE_norm = 0.8, T = 0.5, A_norm = 1.0 -> (0.8 - 0.5) / 0.5 = 0.6
        let img = energy(2, 1, vec![0.8, 1.0]); // peak 1.0 so LPE_norm = values
        let t = AttenuationImage {
            width: 2,
            height: 1,
            values: vec![0.5, 1.0],
        };
        let out = elea(&img, &t, 1.0, &RegularizerConfig::default()).unwrap();
        assert!((out.values[0] - 0.6).abs() < 1e-12);
    }
}
