//! Absorption-depth spectra of the four Zeeman lines.
//!
//! Depth `d` is the exponent of intensity attenuation, `I = I₀ e^(−d)`. Lines are
//! parameterized by peak depth. For a Gaussian of FWHM `G` the integrated depth
//! is `d·G·sqrt(π / (4 ln 2))`; for a Lorentzian of FWHM `L` it is `d·π·L/2`.

use errorfunctions::ComplexErrorFunctions;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::branching::TransitionTable;
use crate::error::ModelError;

const FOUR_LN2: f64 = 4.0 * std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineShapeParams {
    pub gaussian_fwhm_ghz: f64,
    pub lorentzian_fwhm_ghz: f64,
    pub peak_depth: f64,
}

impl LineShapeParams {
    pub fn new(gaussian_fwhm_ghz: f64, lorentzian_fwhm_ghz: f64, peak_depth: f64) -> Result<Self, ModelError> {
        let p = Self { gaussian_fwhm_ghz, lorentzian_fwhm_ghz, peak_depth };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let widths = [self.gaussian_fwhm_ghz, self.lorentzian_fwhm_ghz];
        if widths.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ModelError::InvalidLineShape("widths must be finite and >= 0".into()));
        }
        if widths.iter().all(|w| *w == 0.0) {
            return Err(ModelError::InvalidLineShape("gaussian and lorentzian widths are both zero".into()));
        }
        if !self.peak_depth.is_finite() || self.peak_depth < 0.0 {
            return Err(ModelError::InvalidLineShape(format!("peak depth {} must be >= 0", self.peak_depth)));
        }
        Ok(())
    }

    pub fn with_depth(&self, peak_depth: f64) -> Self {
        Self { peak_depth, ..*self }
    }
}

/// Voigt profile scaled so that its value at the line center is `peak_depth`.
///
/// Evaluated as `Re w(z) / Re w(z₀)` with the Faddeeva function `w`,
/// `z = (Δν + iγ)/(σ√2)`, `z₀ = iγ/(σ√2)`.
pub fn voigt_depth(nu_ghz: f64, center_ghz: f64, params: &LineShapeParams) -> f64 {
    params.peak_depth * voigt_unit(nu_ghz - center_ghz, params.gaussian_fwhm_ghz, params.lorentzian_fwhm_ghz)
}

/// Peak-normalized Voigt shape at detuning `dx` (same units as the widths).
pub(crate) fn voigt_unit(dx: f64, gaussian_fwhm: f64, lorentzian_fwhm: f64) -> f64 {
    if lorentzian_fwhm == 0.0 {
        return (-FOUR_LN2 * (dx / gaussian_fwhm).powi(2)).exp();
    }
    if gaussian_fwhm == 0.0 {
        return 1.0 / (1.0 + (2.0 * dx / lorentzian_fwhm).powi(2));
    }
    let scale = gaussian_fwhm / FOUR_LN2.sqrt(); // σ√2
    let y = 0.5 * lorentzian_fwhm / scale;
    let num = Complex64::new(dx / scale, y).w().re;
    let den = Complex64::new(0.0, y).w().re;
    num / den
}

/// Effective depth seen by light polarized at `phi_deg` from the c-axis:
/// `−ln(cos²φ·e^(−d∥) + sin²φ·e^(−d⊥))`.
pub fn polarization_depth(d_parallel: f64, d_perpendicular: f64, phi_deg: f64) -> f64 {
    let phi = phi_deg.to_radians();
    let (s, c) = phi.sin_cos();
    let (s2, c2) = (s * s, c * c);
    // Expand around whichever endpoint dominates so both endpoints are exact.
    if c2 >= 0.5 {
        d_parallel - (s2 * (d_parallel - d_perpendicular).exp_m1()).ln_1p()
    } else {
        d_perpendicular - (c2 * (d_perpendicular - d_parallel).exp_m1()).ln_1p()
    }
}

/// Integral over all detunings of the peak-normalized Voigt shape.
pub(crate) fn voigt_unit_area(gaussian_fwhm: f64, lorentzian_fwhm: f64) -> f64 {
    if lorentzian_fwhm == 0.0 {
        return gaussian_fwhm * (std::f64::consts::PI / FOUR_LN2).sqrt();
    }
    if gaussian_fwhm == 0.0 {
        return 0.5 * std::f64::consts::PI * lorentzian_fwhm;
    }
    let scale = gaussian_fwhm / FOUR_LN2.sqrt();
    let y = 0.5 * lorentzian_fwhm / scale;
    scale * std::f64::consts::PI.sqrt() / Complex64::new(0.0, y).w().re
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMetadata {
    pub field_tesla: Option<f64>,
    pub theta_deg: Option<f64>,
    pub phi_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionSpectrum {
    pub frequency_ghz: Vec<f64>,
    pub depth: Vec<f64>,
    pub metadata: SpectrumMetadata,
}

impl AbsorptionSpectrum {
    pub fn new(frequency_ghz: Vec<f64>, depth: Vec<f64>, metadata: SpectrumMetadata) -> Result<Self, ModelError> {
        if frequency_ghz.len() != depth.len() {
            return Err(ModelError::InvalidSpectrum(format!(
                "grid has {} points but depth has {}",
                frequency_ghz.len(),
                depth.len()
            )));
        }
        check_grid(&frequency_ghz)?;
        if let Some(i) = depth.iter().position(|d| !d.is_finite() || *d < 0.0) {
            return Err(ModelError::InvalidSpectrum(format!("depth[{i}] = {} is not finite and >= 0", depth[i])));
        }
        Ok(Self { frequency_ghz, depth, metadata })
    }

    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }

    /// Add a frequency-independent background depth.
    pub fn add_background(&mut self, background: f64) -> Result<(), ModelError> {
        if !background.is_finite() || background < 0.0 {
            return Err(ModelError::InvalidArgument(format!("background {background} must be >= 0")));
        }
        self.depth.iter_mut().for_each(|d| *d += background);
        Ok(())
    }

    /// Indices of strict local maxima whose prominence exceeds `min_prominence`.
    ///
    /// Prominence is the height above the higher of the two minima separating the
    /// peak from the nearest higher point (or the spectrum edge) on each side.
    pub fn resolved_peaks(&self, min_prominence: f64) -> Vec<usize> {
        let d = &self.depth;
        let n = d.len();
        let mut peaks = Vec::new();
        let mut i = 1;
        while i + 1 < n {
            if d[i] > d[i - 1] {
                // walk across a possible plateau
                let mut j = i;
                while j + 1 < n && d[j + 1] == d[i] {
                    j += 1;
                }
                if j + 1 < n && d[j + 1] < d[i] {
                    let mid = (i + j) / 2;
                    if prominence(d, mid) > min_prominence {
                        peaks.push(mid);
                    }
                }
                i = j + 1;
            } else {
                i += 1;
            }
        }
        peaks
    }
}

pub(crate) fn prominence(d: &[f64], peak: usize) -> f64 {
    let h = d[peak];
    let mut left_min = h;
    for k in (0..peak).rev() {
        if d[k] > h {
            break;
        }
        left_min = left_min.min(d[k]);
    }
    let mut right_min = h;
    for &v in &d[peak + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<(), ModelError> {
    if grid.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::InvalidSpectrum("grid contains non-finite values".into()));
    }
    if let Some(w) = grid.windows(2).position(|w| w[1] <= w[0]) {
        return Err(ModelError::InvalidSpectrum(format!("grid not strictly increasing at index {}", w + 1)));
    }
    Ok(())
}

/// Evenly spaced grid from `start` to `stop` inclusive.
pub fn linear_grid(start: f64, stop: f64, points: usize) -> Result<Vec<f64>, ModelError> {
    if points < 2 || !(stop > start) || !start.is_finite() || !stop.is_finite() {
        return Err(ModelError::InvalidArgument(format!(
            "grid [{start}, {stop}] with {points} points is not usable"
        )));
    }
    let step = (stop - start) / (points - 1) as f64;
    Ok((0..points).map(|i| if i + 1 == points { stop } else { start + step * i as f64 }).collect())
}

/// Sum the four lines separately for π and σ light, then combine them for a
/// polarization angle `phi_deg`. The two modes are attenuated independently.
pub fn synthesize_spectrum(
    table: &TransitionTable,
    shape: &LineShapeParams,
    total_depth_pi: f64,
    total_depth_sigma: f64,
    phi_deg: f64,
    grid_ghz: &[f64],
) -> Result<AbsorptionSpectrum, ModelError> {
    shape.validate()?;
    check_grid(grid_ghz)?;
    for (name, d) in [("pi", total_depth_pi), ("sigma", total_depth_sigma)] {
        if !d.is_finite() || d < 0.0 {
            return Err(ModelError::InvalidArgument(format!("total {name} depth {d} must be >= 0")));
        }
    }
    if !phi_deg.is_finite() {
        return Err(ModelError::InvalidArgument("polarization angle must be finite".into()));
    }
    let depth = grid_ghz
        .iter()
        .map(|&nu| {
            let (mut d_pi, mut d_sigma) = (0.0, 0.0);
            for line in &table.lines {
                let shape_value = voigt_unit(nu - line.offset_ghz, shape.gaussian_fwhm_ghz, shape.lorentzian_fwhm_ghz);
                d_pi += total_depth_pi * line.strength_pi * shape_value;
                d_sigma += total_depth_sigma * line.strength_sigma * shape_value;
            }
            polarization_depth(d_pi, d_sigma, phi_deg).max(0.0)
        })
        .collect();
    let metadata = SpectrumMetadata {
        field_tesla: table.field.map(|f| f.magnitude_tesla),
        theta_deg: table.field.map(|f| f.theta_deg),
        phi_deg: Some(phi_deg),
    };
    AbsorptionSpectrum::new(grid_ghz.to_vec(), depth, metadata)
}

/// Transmitted intensity `I₀ e^(−d(ν))` on the spectrum grid.
pub fn transmission(spectrum: &AbsorptionSpectrum, input_intensity: f64) -> Result<Vec<f64>, ModelError> {
    if !(input_intensity.is_finite() && input_intensity > 0.0) {
        return Err(ModelError::InvalidArgument(format!("input intensity {input_intensity} must be > 0")));
    }
    Ok(spectrum.depth.iter().map(|d| input_intensity * (-d).exp()).collect())
}
