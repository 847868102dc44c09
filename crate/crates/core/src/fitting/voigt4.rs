use serde::{Deserialize, Serialize};

use super::{least_squares, Dataset, DerivedQuantity, FitResult, LogParameterized, ParametricModel, SolverOptions};
use crate::branching::TransitionTable;
use crate::error::FitError;
use crate::spectrum::{prominence, voigt_unit, AbsorptionSpectrum};

const DEPTH_FLOOR: f64 = 1e-6;

/// Four Voigt lines with one depth shared by the outer pair (a, d), one shared
/// by the inner pair (b, c), common widths and a constant baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourVoigtModel {
    pub d_ad: f64,
    pub d_bc: f64,
    pub centers_ghz: [f64; 4],
    pub gaussian_fwhm_ghz: f64,
    pub lorentzian_fwhm_ghz: Option<f64>,
    pub baseline: f64,
}

impl FourVoigtModel {
    pub fn evaluate(&self, nu_ghz: f64) -> f64 {
        let l = self.lorentzian_fwhm_ghz.unwrap_or(0.0);
        let g = self.gaussian_fwhm_ghz;
        let line = |c: f64| voigt_unit(nu_ghz - c, g, l);
        let [a, b, c, d] = self.centers_ghz;
        self.baseline + self.d_ad * (line(a) + line(d)) + self.d_bc * (line(b) + line(c))
    }

    /// Initial guess from the four most prominent maxima; falls back to the
    /// predicted line positions when fewer than four maxima are resolved.
    pub fn initial_guess(spectrum: &AbsorptionSpectrum, fallback: Option<&TransitionTable>) -> Result<Self, FitError> {
        let (nu, d) = (&spectrum.frequency_ghz, &spectrum.depth);
        if nu.len() < 8 {
            return Err(FitError::TooFewPoints { needed: 8, got: nu.len() });
        }
        let max_depth = d.iter().cloned().fold(0.0, f64::max);
        let baseline = d.iter().cloned().fold(f64::INFINITY, f64::min).max(0.0);
        let mut peaks = spectrum.resolved_peaks(0.02 * max_depth);
        peaks.sort_by(|&i, &j| prominence(d, j).total_cmp(&prominence(d, i)));
        peaks.truncate(4);
        peaks.sort_unstable();

        let centers: [f64; 4] = if peaks.len() == 4 {
            std::array::from_fn(|k| nu[peaks[k]])
        } else if let Some(table) = fallback {
            table.offsets_ghz()
        } else {
            return Err(FitError::Initialization(format!(
                "found {} resolved maxima and no predicted line positions",
                peaks.len()
            )));
        };
        let depth_at = |x: f64| interpolate(nu, d, x) - baseline;
        let d_ad = (0.5 * (depth_at(centers[0]) + depth_at(centers[3]))).max(DEPTH_FLOOR);
        let d_bc = (0.5 * (depth_at(centers[1]) + depth_at(centers[2]))).max(DEPTH_FLOOR);

        let span = nu[nu.len() - 1] - nu[0];
        let spacing = span / (nu.len() - 1) as f64;
        let tallest = (0..d.len()).max_by(|&i, &j| d[i].total_cmp(&d[j])).unwrap_or(0);
        let width = half_max_width(nu, d, tallest, baseline).unwrap_or(span / 10.0);
        Ok(Self {
            d_ad,
            d_bc,
            centers_ghz: centers,
            gaussian_fwhm_ghz: width.clamp(2.0 * spacing, span / 4.0),
            lorentzian_fwhm_ghz: None,
            baseline,
        })
    }

    fn to_internal(self) -> (Vec<f64>, Vec<bool>) {
        let mut q = vec![
            self.d_ad.max(DEPTH_FLOOR).ln(),
            self.d_bc.max(DEPTH_FLOOR).ln(),
            self.centers_ghz[0],
            self.centers_ghz[1],
            self.centers_ghz[2],
            self.centers_ghz[3],
            self.gaussian_fwhm_ghz.max(DEPTH_FLOOR).ln(),
        ];
        let mut mask = vec![true, true, false, false, false, false, true];
        if let Some(l) = self.lorentzian_fwhm_ghz {
            q.push(l.max(DEPTH_FLOOR).ln());
            mask.push(true);
        }
        q.push(self.baseline);
        mask.push(false);
        (q, mask)
    }
}

struct FourVoigtParametric {
    with_lorentzian: bool,
}

impl ParametricModel for FourVoigtParametric {
    fn n_params(&self) -> usize {
        if self.with_lorentzian { 9 } else { 8 }
    }

    fn evaluate(&self, x: f64, p: &[f64]) -> f64 {
        let (lorentzian, baseline) = if self.with_lorentzian { (Some(p[7]), p[8]) } else { (None, p[7]) };
        FourVoigtModel {
            d_ad: p[0],
            d_bc: p[1],
            centers_ghz: [p[2], p[3], p[4], p[5]],
            gaussian_fwhm_ghz: p[6],
            lorentzian_fwhm_ghz: lorentzian,
            baseline,
        }
        .evaluate(x)
    }
}

/// Fit the four-line model to a spectrum. Depths and widths are fitted as
/// logarithms so they stay positive. The ratio `d_ad / d_bc` is reported as the
/// derived quantity `r_ad_bc`.
pub fn fit_four_voigt(spectrum: &AbsorptionSpectrum, init: &FourVoigtModel) -> Result<FitResult, FitError> {
    let (lo, hi) = match (spectrum.frequency_ghz.first(), spectrum.frequency_ghz.last()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => return Err(FitError::TooFewPoints { needed: 9, got: 0 }),
    };
    if let Some(c) = init.centers_ghz.iter().find(|c| **c < lo || **c > hi) {
        return Err(FitError::InvalidData(format!("line center {c} GHz lies outside the spectrum [{lo}, {hi}]")));
    }
    let data = Dataset::new(spectrum.frequency_ghz.clone(), spectrum.depth.clone())?;
    let with_lorentzian = init.lorentzian_fwhm_ghz.is_some();
    let model = FourVoigtParametric { with_lorentzian };
    if data.len() < model.n_params() {
        return Err(FitError::TooFewPoints { needed: model.n_params(), got: data.len() });
    }
    let (q0, mask) = init.to_internal();
    let wrapped = LogParameterized { inner: &model, log_mask: &mask };
    let internal = least_squares(&wrapped, &data, &q0, None, &SolverOptions::default())?;

    // R = exp(ln d_ad − ln d_bc); its error follows from the log-space covariance.
    let log_ratio_err = internal.linear_combination_error(&{
        let mut c = vec![0.0; q0.len()];
        c[0] = 1.0;
        c[1] = -1.0;
        c
    });
    let mut names = vec!["d_ad", "d_bc", "center_a_ghz", "center_b_ghz", "center_c_ghz", "center_d_ghz", "gaussian_fwhm_ghz"];
    if with_lorentzian {
        names.push("lorentzian_fwhm_ghz");
    }
    names.push("baseline");
    let mut fit = internal.into_natural(&names, &mask);
    let ratio = fit.parameters[0] / fit.parameters[1];
    fit.derived.push(DerivedQuantity { name: "r_ad_bc".into(), value: ratio, error: ratio * log_ratio_err });
    if fit.standard_errors.iter().any(|e| !e.is_finite()) {
        fit.warnings.push("some lines are not resolved; errors unbounded".into());
    }
    Ok(fit)
}

fn interpolate(x: &[f64], y: &[f64], at: f64) -> f64 {
    match x.iter().position(|&v| v >= at) {
        Some(0) => y[0],
        Some(i) => {
            let t = (at - x[i - 1]) / (x[i] - x[i - 1]);
            y[i - 1] + t * (y[i] - y[i - 1])
        }
        None => y[y.len() - 1],
    }
}

fn half_max_width(x: &[f64], y: &[f64], peak: usize, baseline: f64) -> Option<f64> {
    let half = baseline + 0.5 * (y[peak] - baseline);
    let left = (0..peak).rev().find(|&i| y[i] <= half)?;
    let right = (peak + 1..y.len()).find(|&i| y[i] <= half)?;
    Some(x[right] - x[left])
}
