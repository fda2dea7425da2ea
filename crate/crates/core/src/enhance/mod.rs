//! Local-phase multi-feature enhancement.
//!
//! A grayscale image is filtered through a scale-space bandpass quadrature
//! bank (log-Gabor or ASSD radial profiles paired with the Riesz kernels),
//! producing three feature images:
//!
//! * LwPA — local weighted mean phase angle,
//! * LPE — phase-weighted local phase energy,
//! * ELEA — LPE corrected by a transmission map estimated with weighted-L1
//!   contextual regularization,
//!
//! which are stacked into a three-channel [`MultiFeatureImage`].

pub mod fft;
mod filters;
mod monogenic;
mod phase;
mod transmission;

pub use filters::{
    composite_filters, make_radial_profile, riesz_kernels, CompositeScaleFilters,
    FilterBankConfig, FrequencyResponse, ProfileKind,
};
pub use monogenic::{monogenic_transform, ScaleResponse, ScaleResponses};
pub use phase::{lpe, lwpa, EnergyImage, PhaseImage};
pub use transmission::{
    elea, estimate_airlight, initial_transmission, shrink, solve_transmission,
    solve_transmission_with_trace, AttenuationImage, RegularizerConfig, SolverStep,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{GrayImage, MultiFeatureImage};

/// Enhancement parameters: one filter bank plus the transmission solver.
///
/// The bank struct carries both radial families; the phase channel always
/// runs log-Gabor and the energy channels ASSD, sharing the bank's
/// scale-space parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhanceConfig {
    pub filterbank: FilterBankConfig,
    pub regularizer: RegularizerConfig,
}

/// Stacks the three feature images into the (LwPA, LPE rescaled, ELEA)
/// multi-feature image. The LPE channel is rescaled to [0,1] by its peak
/// (an all-zero plane stays all-zero); the other channels pass through.
pub fn compose_mf(
    phase: &PhaseImage,
    energy: &EnergyImage,
    atten: &AttenuationImage,
) -> Result<MultiFeatureImage> {
    let (w, h) = (phase.width, phase.height);
    for (gw, gh) in [(energy.width, energy.height), (atten.width, atten.height)] {
        if gw != w || gh != h {
            return Err(Error::DimMismatch {
                expected_w: w,
                expected_h: h,
                got_w: gw,
                got_h: gh,
            });
        }
    }
    let peak = energy.max_value();
    let energy_scaled: Vec<f64> = if peak > 0.0 {
        energy.values.iter().map(|v| (v / peak).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; w * h]
    };
    MultiFeatureImage::from_planes(
        w,
        h,
        [phase.values.clone(), energy_scaled, atten.values.clone()],
    )
}

/// Runs the full enhancement pipeline. Pure: fixed inputs and configs give
/// bitwise-identical output.
pub fn enhance_image(
    img: &GrayImage,
    fb: &FilterBankConfig,
    rc: &RegularizerConfig,
) -> Result<MultiFeatureImage> {
    let phase_resp = monogenic_transform(img, &fb.with_profile(ProfileKind::LogGabor))
        .map_err(|e| Error::stage("monogenic_transform", e))?;
    let phase = lwpa(&phase_resp).map_err(|e| Error::stage("lwpa", e))?;

    let energy_resp = monogenic_transform(img, &fb.with_profile(ProfileKind::Assd))
        .map_err(|e| Error::stage("monogenic_transform", e))?;
    let energy = lpe(&energy_resp, &phase).map_err(|e| Error::stage("lpe", e))?;

    let airlight = estimate_airlight(&energy, rc).map_err(|e| Error::stage("estimate_airlight", e))?;
    let t_hat = initial_transmission(&energy, airlight, rc)
        .map_err(|e| Error::stage("initial_transmission", e))?;
    let transmission =
        solve_transmission(&t_hat, &energy, rc).map_err(|e| Error::stage("solve_transmission", e))?;
    let atten =
        elea(&energy, &transmission, airlight, rc).map_err(|e| Error::stage("elea", e))?;

    compose_mf(&phase, &energy, &atten).map_err(|e| Error::stage("compose_mf", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob_image(w: usize, h: usize) -> GrayImage {
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let pixels = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                0.3 + 0.6 * (-d2 / 40.0).exp()
            })
            .collect();
        GrayImage::from_pixels(w, h, pixels).unwrap()
    }

    fn configs() -> (FilterBankConfig, RegularizerConfig) {
        (
            FilterBankConfig {
                base_wavelength: 8.0,
                ..FilterBankConfig::default()
            },
            RegularizerConfig::default(),
        )
    }

    #[test]
    fn compose_round_trips_exact_planes() {
        let phase = PhaseImage {
            width: 2,
            height: 2,
            values: vec![0.1, 0.2, 0.3, 0.4],
        };
        let energy = EnergyImage {
            width: 2,
            height: 2,
            values: vec![0.0, 2.0, 4.0, 1.0],
        };
        let atten = AttenuationImage {
            width: 2,
            height: 2,
            values: vec![1.0, 0.5, 0.25, 0.125],
        };
        let mf = compose_mf(&phase, &energy, &atten).unwrap();
        let planes = mf.clone().into_planes();
        assert_eq!(planes[0], phase.values);
        assert_eq!(planes[1], vec![0.0, 0.5, 1.0, 0.25]);
        assert_eq!(planes[2], atten.values);
        assert_eq!(mf.channel(0), &phase.values[..]);
    }

    #[test]
    fn compose_rejects_dim_mismatch() {
        let phase = PhaseImage {
            width: 2,
            height: 2,
            values: vec![0.5; 4],
        };
        let energy = EnergyImage {
            width: 3,
            height: 2,
            values: vec![0.0; 6],
        };
        let atten = AttenuationImage {
            width: 2,
            height: 2,
            values: vec![1.0; 4],
        };
        assert!(compose_mf(&phase, &energy, &atten).is_err());
    }

    #[test]
    fn compose_zero_inputs_preserve_channel0() {
        let phase = PhaseImage {
            width: 2,
            height: 2,
            values: vec![0.5; 4],
        };
        let energy = EnergyImage {
            width: 2,
            height: 2,
            values: vec![0.0; 4],
        };
        let atten = AttenuationImage {
            width: 2,
            height: 2,
            values: vec![0.0; 4],
        };
        let mf = compose_mf(&phase, &energy, &atten).unwrap();
        assert_eq!(mf.channel(0), &[0.5; 4]);
        assert_eq!(mf.channel(1), &[0.0; 4]);
        assert_eq!(mf.channel(2), &[0.0; 4]);
    }

    #[test]
    fn enhance_is_deterministic() {
        let img = blob_image(32, 32);
        let (fb, rc) = configs();
        let a = enhance_image(&img, &fb, &rc).unwrap();
        let b = enhance_image(&img, &fb, &rc).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn enhance_channel0_is_affine_invariant() {
        let img = blob_image(32, 32);
        let scaled = GrayImage::from_pixels(
            32,
            32,
            img.pixels().iter().map(|p| 2.0 * p + 25.0).collect(),
        )
        .unwrap();
        let (fb, rc) = configs();
        let a = enhance_image(&img, &fb, &rc).unwrap();
        let b = enhance_image(&scaled, &fb, &rc).unwrap();
        for (x, y) in a.channel(0).iter().zip(b.channel(0)) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn enhance_equals_staged_composition() {
        let img = blob_image(64, 64);
        let (fb, rc) = configs();
        let whole = enhance_image(&img, &fb, &rc).unwrap();

        let phase_resp =
            monogenic_transform(&img, &fb.with_profile(ProfileKind::LogGabor)).unwrap();
        let phase = lwpa(&phase_resp).unwrap();
        let energy_resp = monogenic_transform(&img, &fb.with_profile(ProfileKind::Assd)).unwrap();
        let energy = lpe(&energy_resp, &phase).unwrap();
        let airlight = estimate_airlight(&energy, &rc).unwrap();
        let t_hat = initial_transmission(&energy, airlight, &rc).unwrap();
        let transmission = solve_transmission(&t_hat, &energy, &rc).unwrap();
        let atten = elea(&energy, &transmission, airlight, &rc).unwrap();
        let staged = compose_mf(&phase, &energy, &atten).unwrap();

        assert_eq!(whole, staged);
    }

    #[test]
    fn enhance_ranges_are_contained() {
        let img = blob_image(48, 40);
        let (fb, rc) = configs();
        let mf = enhance_image(&img, &fb, &rc).unwrap();
        for c in 0..3 {
            for v in mf.channel(c) {
                assert!((0.0..=1.0).contains(v), "channel {c}: {v}");
            }
        }
    }
}
