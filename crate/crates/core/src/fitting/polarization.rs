use serde::{Deserialize, Serialize};

use super::{least_squares, Dataset, FitResult, LogParameterized, ParametricModel, SolverOptions};
use crate::error::FitError;
use crate::spectrum::polarization_depth;

/// `d(φ) = −ln(cos²φ·e^(−d∥) + sin²φ·e^(−d⊥))` with `x = φ` in degrees and
/// parameters `[d∥, d⊥]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct PolarizationModel;

impl ParametricModel for PolarizationModel {
    fn n_params(&self) -> usize {
        2
    }

    fn evaluate(&self, phi_deg: f64, p: &[f64]) -> f64 {
        polarization_depth(p[0], p[1], phi_deg)
    }

    fn gradient(&self, phi_deg: f64, p: &[f64], grad: &mut [f64]) -> bool {
        let (s, c) = phi_deg.to_radians().sin_cos();
        // shift by the smaller depth so neither exponential underflows
        let base = p[0].min(p[1]);
        let wp = c * c * (base - p[0]).exp();
        let ws = s * s * (base - p[1]).exp();
        let total = wp + ws;
        grad[0] = wp / total;
        grad[1] = ws / total;
        true
    }
}

/// Fit `d∥` and `d⊥` to depths measured at several polarization angles.
/// Both depths are fitted as logarithms.
pub fn fit_polarization_model(angles_deg: &[f64], depths: &[f64]) -> Result<FitResult, FitError> {
    fit_polarization(Dataset::new(angles_deg.to_vec(), depths.to_vec())?)
}

/// As [`fit_polarization_model`], with each depth weighted by `1/σ²` from its
/// standard error, e.g. the error reported by a four-line fit of that spectrum.
pub fn fit_polarization_model_weighted(
    angles_deg: &[f64],
    depths: &[f64],
    errors: &[f64],
) -> Result<FitResult, FitError> {
    if let Some(e) = errors.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
        return Err(FitError::InvalidData(format!("depth error {e} must be finite and > 0")));
    }
    let weights = errors.iter().map(|e| 1.0 / (e * e)).collect();
    fit_polarization(Dataset::weighted(angles_deg.to_vec(), depths.to_vec(), Some(weights))?)
}

fn fit_polarization(data: Dataset) -> Result<FitResult, FitError> {
    let (angles_deg, depths) = (&data.x, &data.y);
    if data.len() < 2 {
        return Err(FitError::TooFewPoints { needed: 2, got: data.len() });
    }
    let mut folded: Vec<f64> = angles_deg.iter().map(|a| fold(*a)).collect();
    folded.sort_by(f64::total_cmp);
    folded.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    if folded.len() < 2 {
        return Err(FitError::RankDeficient("all polarization angles coincide (mod 180°)".into()));
    }

    // Start from the points closest to φ = 0° and φ = 90°.
    let nearest = |target: f64| {
        (0..angles_deg.len())
            .min_by(|&i, &j| {
                let di = (fold(angles_deg[i]) - target).abs();
                let dj = (fold(angles_deg[j]) - target).abs();
                di.total_cmp(&dj)
            })
            .map(|i| depths[i])
            .unwrap_or(1.0)
    };
    let init = [nearest(0.0).max(1e-4).ln(), nearest(90.0).max(1e-4).ln()];
    let mask = [true, true];
    let wrapped = LogParameterized { inner: &PolarizationModel, log_mask: &mask };
    let fit = least_squares(&wrapped, &data, &init, None, &SolverOptions::default())?;
    Ok(fit.into_natural(&["d_parallel", "d_perpendicular"], &mask))
}

// Fold an angle onto [0°, 90°] using the 180° period and mirror symmetry of d(φ).
fn fold(phi_deg: f64) -> f64 {
    let t = phi_deg.rem_euclid(180.0);
    if t > 90.0 { 180.0 - t } else { t }
}

/// Branching ratios from polarization fits of the outer (a, d) and inner (b, c)
/// line pairs. Errors assume the two fits are independent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarizationBranching {
    pub r_parallel: f64,
    pub r_parallel_error: f64,
    pub r_perpendicular: f64,
    pub r_perpendicular_error: f64,
    pub inverse_r_perpendicular: f64,
    pub inverse_r_perpendicular_error: f64,
}

impl PolarizationBranching {
    pub fn from_fits(ad: &FitResult, bc: &FitResult) -> Result<Self, FitError> {
        let get = |fit: &FitResult, name: &str| -> Result<(f64, f64), FitError> {
            Ok((
                fit.param(name).ok_or_else(|| FitError::InvalidData(format!("fit lacks {name}")))?,
                fit.error(name).unwrap_or(f64::INFINITY),
            ))
        };
        let (par_ad, e_par_ad) = get(ad, "d_parallel")?;
        let (perp_ad, e_perp_ad) = get(ad, "d_perpendicular")?;
        let (par_bc, e_par_bc) = get(bc, "d_parallel")?;
        let (perp_bc, e_perp_bc) = get(bc, "d_perpendicular")?;
        let rel = |a: f64, ea: f64, b: f64, eb: f64| ((ea / a).powi(2) + (eb / b).powi(2)).sqrt();

        let r_parallel = par_ad / par_bc;
        let r_perpendicular = perp_ad / perp_bc;
        let rel_perp = rel(perp_ad, e_perp_ad, perp_bc, e_perp_bc);
        Ok(Self {
            r_parallel,
            r_parallel_error: r_parallel * rel(par_ad, e_par_ad, par_bc, e_par_bc),
            r_perpendicular,
            r_perpendicular_error: r_perpendicular * rel_perp,
            inverse_r_perpendicular: 1.0 / r_perpendicular,
            inverse_r_perpendicular_error: rel_perp / r_perpendicular,
        })
    }

    /// Whether `R∥` and `1/R⊥` agree within their combined errors.
    pub fn reciprocity_consistent(&self) -> bool {
        let combined = self.r_parallel_error.hypot(self.inverse_r_perpendicular_error);
        (self.r_parallel - self.inverse_r_perpendicular).abs() <= combined
    }
}
