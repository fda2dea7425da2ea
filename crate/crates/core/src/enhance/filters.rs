//! Bandpass radial profiles and the Riesz kernel pair, built directly on
//! the FFT bin grid.

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::enhance::fft::{bin_frequency, is_self_mirror};
use crate::error::{Error, Result};

/// Radial profile family of the bandpass filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    LogGabor,
    Assd,
}

/// Scale-space bandpass quadrature filter bank parameters.
///
/// One struct carries the knobs of both supported families; `profile_kind`
/// selects which one a standalone transform uses. Scale `s` has wavelength
/// `base_wavelength * scale_multiplier^s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterBankConfig {
    pub profile_kind: ProfileKind,
    pub num_scales: usize,
    /// Wavelength of the finest scale, in pixels.
    pub base_wavelength: f64,
    pub scale_multiplier: f64,
    /// Log-Gabor bandwidth parameter, in (0,1).
    pub sigma_ratio: f64,
    pub assd_alpha: f64,
    pub assd_order: u32,
}

impl Default for FilterBankConfig {
    fn default() -> Self {
        Self {
            profile_kind: ProfileKind::LogGabor,
            num_scales: 3,
            base_wavelength: 16.0,
            scale_multiplier: 2.0,
            sigma_ratio: 0.55,
            assd_alpha: 2.0,
            assd_order: 2,
        }
    }
}

impl FilterBankConfig {
    /// The same bank with a different radial family.
    pub fn with_profile(&self, kind: ProfileKind) -> Self {
        Self {
            profile_kind: kind,
            ..self.clone()
        }
    }

    /// Wavelength, in pixels, of scale `s`.
    pub fn wavelength(&self, scale_index: usize) -> f64 {
        self.base_wavelength * self.scale_multiplier.powi(scale_index as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_scales == 0 {
            return Err(Error::InvalidConfig("num_scales must be >= 1".into()));
        }
        if self.base_wavelength < 2.0 {
            return Err(Error::InvalidConfig(format!(
                "base_wavelength {} is below the 2-pixel Nyquist limit",
                self.base_wavelength
            )));
        }
        if self.scale_multiplier <= 1.0 {
            return Err(Error::InvalidConfig("scale_multiplier must be > 1".into()));
        }
        if !(0.0 < self.sigma_ratio && self.sigma_ratio < 1.0) {
            return Err(Error::InvalidConfig("sigma_ratio must be in (0,1)".into()));
        }
        if self.assd_alpha <= 0.0 {
            return Err(Error::InvalidConfig("assd_alpha must be > 0".into()));
        }
        if self.assd_order < 1 {
            return Err(Error::InvalidConfig("assd_order must be >= 1".into()));
        }
        Ok(())
    }

    fn validate_for_dims(&self, scale_index: usize, dims: (usize, usize)) -> Result<()> {
        self.validate()?;
        let (w, h) = dims;
        if w < 4 || h < 4 {
            return Err(Error::InvalidConfig(format!(
                "grid {w}x{h} is below the 4x4 minimum"
            )));
        }
        if scale_index >= self.num_scales {
            return Err(Error::InvalidConfig(format!(
                "scale index {scale_index} out of range (num_scales {})",
                self.num_scales
            )));
        }
        let lambda = self.wavelength(scale_index);
        if lambda < 2.0 {
            return Err(Error::InvalidConfig(format!(
                "scale {scale_index} wavelength {lambda} is below 2 pixels"
            )));
        }
        // Peak frequency must stay above the grid's first frequency bin.
        if lambda > w.min(h) as f64 {
            return Err(Error::InvalidConfig(format!(
                "scale {scale_index} wavelength {lambda} exceeds grid extent {}",
                w.min(h)
            )));
        }
        Ok(())
    }

    /// Radial transfer function at frequency magnitude `rho` (cycles/pixel)
    /// for the given scale. Zero at DC; peaks at 1 on the scale's center
    /// frequency.
    pub fn profile_value(&self, scale_index: usize, rho: f64) -> f64 {
        if rho <= 0.0 {
            return 0.0;
        }
        let rho0 = 1.0 / self.wavelength(scale_index);
        match self.profile_kind {
            ProfileKind::LogGabor => {
                let num = (rho / rho0).ln().powi(2);
                let den = 2.0 * self.sigma_ratio.ln().powi(2);
                (-num / den).exp()
            }
            ProfileKind::Assd => {
                let n = self.assd_order as f64;
                let a = self.assd_alpha;
                let r = rho / rho0;
                r.powf(n) * ((n / a) * (1.0 - r.powf(a))).exp()
            }
        }
    }
}

/// A frequency-domain filter on the FFT bin grid of a `width x height`
/// image. Bin `(kx, ky)` holds the transfer value at normalized frequency
/// `(u, v) = (bin_frequency(kx, width), bin_frequency(ky, height))`.
#[derive(Debug, Clone)]
pub struct FrequencyResponse {
    pub width: usize,
    pub height: usize,
    pub values: Vec<Complex<f64>>,
}

impl FrequencyResponse {
    #[inline]
    pub fn at(&self, kx: usize, ky: usize) -> Complex<f64> {
        self.values[ky * self.width + kx]
    }
}

/// Samples the bandpass radial profile of one scale onto the FFT grid.
pub fn make_radial_profile(
    config: &FilterBankConfig,
    scale_index: usize,
    dims: (usize, usize),
) -> Result<FrequencyResponse> {
    config.validate_for_dims(scale_index, dims)?;
    let (w, h) = dims;
    let mut values = Vec::with_capacity(w * h);
    for ky in 0..h {
        let v = bin_frequency(ky, h);
        for kx in 0..w {
            let u = bin_frequency(kx, w);
            let rho = (u * u + v * v).sqrt();
            values.push(Complex::new(config.profile_value(scale_index, rho), 0.0));
        }
    }
    Ok(FrequencyResponse {
        width: w,
        height: h,
        values,
    })
}

/// Riesz transform multiplier pair: `H1 = i u / |omega|`, `H2 = i v / |omega|`,
/// both zero at DC.
pub fn riesz_kernels(dims: (usize, usize)) -> Result<(FrequencyResponse, FrequencyResponse)> {
    let (w, h) = dims;
    if w < 2 || h < 2 {
        return Err(Error::InvalidConfig(format!(
            "grid {w}x{h} is below the 2x2 minimum"
        )));
    }
    let mut h1 = Vec::with_capacity(w * h);
    let mut h2 = Vec::with_capacity(w * h);
    for ky in 0..h {
        let v = bin_frequency(ky, h);
        for kx in 0..w {
            let u = bin_frequency(kx, w);
            let mag = (u * u + v * v).sqrt();
            if mag == 0.0 {
                h1.push(Complex::new(0.0, 0.0));
                h2.push(Complex::new(0.0, 0.0));
            } else {
                h1.push(Complex::new(0.0, u / mag));
                h2.push(Complex::new(0.0, v / mag));
            }
        }
    }
    Ok((
        FrequencyResponse {
            width: w,
            height: h,
            values: h1,
        },
        FrequencyResponse {
            width: w,
            height: h,
            values: h2,
        },
    ))
}

/// The per-scale composite filters actually applied to an image spectrum:
/// `even = G_s`, `odd1 = G_s H1`, `odd2 = G_s H2`.
///
/// On an even-length axis the Nyquist bin aliases +1/2 and -1/2 cycles/px
/// onto one bin, so a purely imaginary odd multiplier cannot stay
/// conjugate-symmetric across it: `odd1` is zeroed on self-aliased `u`
/// lines and `odd2` on self-aliased `v` lines. That keeps every composite
/// spectrum Hermitian and the inverse transforms real to round-off.
pub struct CompositeScaleFilters {
    pub even: FrequencyResponse,
    pub odd1: FrequencyResponse,
    pub odd2: FrequencyResponse,
}

pub fn composite_filters(
    config: &FilterBankConfig,
    dims: (usize, usize),
) -> Result<Vec<CompositeScaleFilters>> {
    let (riesz1, riesz2) = riesz_kernels(dims)?;
    let (w, h) = dims;
    let mut out = Vec::with_capacity(config.num_scales);
    for s in 0..config.num_scales {
        let even = make_radial_profile(config, s, dims)?;
        let mut odd1 = Vec::with_capacity(w * h);
        let mut odd2 = Vec::with_capacity(w * h);
        for ky in 0..h {
            for kx in 0..w {
                let i = ky * w + kx;
                odd1.push(if is_self_mirror(kx, w) {
                    Complex::new(0.0, 0.0)
                } else {
                    even.values[i] * riesz1.values[i]
                });
                odd2.push(if is_self_mirror(ky, h) {
                    Complex::new(0.0, 0.0)
                } else {
                    even.values[i] * riesz2.values[i]
                });
            }
        }
        out.push(CompositeScaleFilters {
            even,
            odd1: FrequencyResponse {
                width: w,
                height: h,
                values: odd1,
            },
            odd2: FrequencyResponse {
                width: w,
                height: h,
                values: odd2,
            },
        });
    }
    Ok(out)
}
