//! Local weighted mean phase angle and phase-symmetry energy.

use std::f64::consts::PI;

use crate::enhance::monogenic::ScaleResponses;
use crate::error::{Error, Result};

/// Normalized local phase, every value in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

/// Non-negative local phase energy.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl EnergyImage {
    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

/// Local weighted mean phase angle over all scales.
///
/// `phi = atan2(sum_s even_s, sqrt((sum_s odd1_s)^2 + (sum_s odd2_s)^2))`,
/// mapped to [0,1] by `(phi + pi/2) / pi`. Pixels where every accumulated
/// response is zero take the midpoint 0.5.
pub fn lwpa(resp: &ScaleResponses) -> Result<PhaseImage> {
    if resp.scales.is_empty() {
        return Err(Error::EmptyInput("no scales in responses".into()));
    }
    let n = resp.len();
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let mut even = 0.0;
        let mut odd1 = 0.0;
        let mut odd2 = 0.0;
        for s in &resp.scales {
            even += s.even[i];
            odd1 += s.odd1[i];
            odd2 += s.odd2[i];
        }
        let odd_mag = (odd1 * odd1 + odd2 * odd2).sqrt();
        let v = if even == 0.0 && odd_mag == 0.0 {
            0.5
        } else {
            (even.atan2(odd_mag) + PI / 2.0) / PI
        };
        values.push(v.clamp(0.0, 1.0));
    }
    Ok(PhaseImage {
        width: resp.width,
        height: resp.height,
        values,
    })
}

/// Phase-symmetry energy weighted by the normalized phase:
/// `LPE = n(x) * sum_s max(|even_s| - sqrt(odd1_s^2 + odd2_s^2), 0)`.
pub fn lpe(resp: &ScaleResponses, phase: &PhaseImage) -> Result<EnergyImage> {
    if phase.width != resp.width || phase.height != resp.height {
        return Err(Error::DimMismatch {
            expected_w: resp.width,
            expected_h: resp.height,
            got_w: phase.width,
            got_h: phase.height,
        });
    }
    let n = resp.len();
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let mut sym = 0.0;
        for s in &resp.scales {
            sym += (s.even[i].abs() - s.odd_magnitude(i)).max(0.0);
        }
        values.push(phase.values[i] * sym);
    }
    Ok(EnergyImage {
        width: resp.width,
        height: resp.height,
        values,
    })
}
