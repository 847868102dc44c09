use nalgebra::{DMatrix, DVector};

use super::{least_squares, Dataset, DerivedQuantity, FitResult, LogParameterized, ParametricModel, SolverOptions};
use crate::error::FitError;

/// Time constants closer than this ratio cannot be told apart reliably.
pub const MIN_IDENTIFIABLE_TAU_RATIO: f64 = 1.5;

/// `y(t) = y∞ − Σ Aᵢ e^(−t/τᵢ)`, parameters `[y∞, A₁, τ₁, A₂, τ₂, …]`.
#[derive(Debug, Clone, Copy)]
pub struct RecoveryModel {
    pub components: usize,
}

impl ParametricModel for RecoveryModel {
    fn n_params(&self) -> usize {
        1 + 2 * self.components
    }

    fn evaluate(&self, t: f64, p: &[f64]) -> f64 {
        p[0] - p[1..].chunks_exact(2).map(|c| c[0] * (-t / c[1]).exp()).sum::<f64>()
    }

    fn gradient(&self, t: f64, p: &[f64], grad: &mut [f64]) -> bool {
        grad[0] = 1.0;
        for (k, c) in p[1..].chunks_exact(2).enumerate() {
            let e = (-t / c[1]).exp();
            grad[1 + 2 * k] = -e;
            grad[2 + 2 * k] = -c[0] * e * t / (c[1] * c[1]);
        }
        true
    }
}

/// Fit a one- or two-component exponential recovery.
///
/// Delays and the fitted time constants share units. Time constants are fitted
/// as logarithms and reported in increasing order. The extrapolated value at
/// zero delay is reported as the derived quantity `zero_delay`.
pub fn fit_exponential_recovery(delays: &[f64], fractions: &[f64], components: usize) -> Result<FitResult, FitError> {
    if !(1..=2).contains(&components) {
        return Err(FitError::InvalidData(format!("{components} components requested; 1 or 2 supported")));
    }
    let data = Dataset::new(delays.to_vec(), fractions.to_vec())?;
    let needed = 2 * components + 1;
    if data.len() < needed {
        return Err(FitError::TooFewPoints { needed, got: data.len() });
    }
    if delays.iter().any(|t| *t < 0.0) {
        return Err(FitError::InvalidData("delays must be >= 0".into()));
    }

    let model = RecoveryModel { components };
    let init = grid_initial_guess(delays, fractions, components)?;
    let mask: Vec<bool> = (0..model.n_params()).map(|i| i > 0 && i % 2 == 0).collect();
    let q0: Vec<f64> = init.iter().zip(&mask).map(|(v, &l)| if l { v.ln() } else { *v }).collect();
    let wrapped = LogParameterized { inner: &model, log_mask: &mask };
    let internal = least_squares(&wrapped, &data, &q0, None, &SolverOptions::default())?;

    let names: Vec<&str> = match components {
        1 => vec!["y_inf", "amplitude_1", "tau_1"],
        _ => vec!["y_inf", "amplitude_1", "tau_1", "amplitude_2", "tau_2"],
    };
    let mut fit = internal.into_natural(&names, &mask);
    if components == 2 && fit.parameters[2] > fit.parameters[4] {
        swap_components(&mut fit);
    }

    let mut coeffs = vec![0.0; fit.parameters.len()];
    coeffs[0] = 1.0;
    for k in 0..components {
        coeffs[1 + 2 * k] = -1.0;
    }
    let zero = model.evaluate(0.0, &fit.parameters);
    let zero_err = fit.linear_combination_error(&coeffs);
    fit.derived.push(DerivedQuantity { name: "zero_delay".into(), value: zero, error: zero_err });
    if components == 2 {
        let ratio = fit.parameters[4] / fit.parameters[2];
        fit.derived.push(DerivedQuantity { name: "tau_ratio".into(), value: ratio, error: f64::NAN });
        if ratio < MIN_IDENTIFIABLE_TAU_RATIO {
            fit.warnings.push(format!("time constants not identifiable (ratio {ratio:.3} < {MIN_IDENTIFIABLE_TAU_RATIO})"));
        }
    }
    Ok(fit)
}

fn swap_components(fit: &mut FitResult) {
    let perm = [0usize, 3, 4, 1, 2];
    let permute = |v: &Vec<f64>| perm.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    fit.parameters = permute(&fit.parameters);
    fit.standard_errors = permute(&fit.standard_errors);
    if let Some(c) = &fit.covariance {
        fit.covariance = Some(perm.iter().map(|&i| perm.iter().map(|&j| c[i][j]).collect()).collect());
    }
}

// Variable projection on a log grid of time constants: for fixed τ the model is
// linear in (y∞, A), so each grid point is a small linear least-squares solve.
fn grid_initial_guess(t: &[f64], y: &[f64], components: usize) -> Result<Vec<f64>, FitError> {
    let t_max = t.iter().cloned().fold(0.0, f64::max);
    let mut positive: Vec<f64> = t.iter().cloned().filter(|v| *v > 0.0).collect();
    positive.sort_by(f64::total_cmp);
    let t_min = positive.first().copied().unwrap_or(t_max).min(t_max);
    if t_max <= 0.0 {
        return Err(FitError::RankDeficient("all delays are zero".into()));
    }
    let (lo, hi) = ((0.2 * t_min).ln(), (3.0 * t_max).ln());
    let n_grid = 60;
    let taus: Vec<f64> = (0..n_grid).map(|i| (lo + (hi - lo) * i as f64 / (n_grid - 1) as f64).exp()).collect();

    let solve = |tau_set: &[f64]| -> Option<(f64, Vec<f64>)> {
        let n = t.len();
        let k = 1 + tau_set.len();
        let a = DMatrix::from_fn(n, k, |i, j| if j == 0 { 1.0 } else { -(-t[i] / tau_set[j - 1]).exp() });
        let b = DVector::from_column_slice(y);
        let coef = a.clone().svd(true, true).solve(&b, 1e-12).ok()?;
        let rss = (&a * &coef - &b).norm_squared();
        rss.is_finite().then(|| (rss, coef.iter().cloned().collect()))
    };

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |tau_set: &[f64]| {
        if let Some((rss, coef)) = solve(tau_set) {
            if best.as_ref().is_none_or(|(b, _)| rss < *b) {
                let mut p = vec![coef[0]];
                for (j, tau) in tau_set.iter().enumerate() {
                    p.push(coef[j + 1]);
                    p.push(*tau);
                }
                best = Some((rss, p));
            }
        }
    };
    if components == 1 {
        for tau in &taus {
            consider(&[*tau]);
        }
    } else {
        for i in 0..n_grid {
            for j in (i + 3)..n_grid {
                consider(&[taus[i], taus[j]]);
            }
        }
    }
    best.map(|(_, p)| p).ok_or_else(|| FitError::Initialization("no usable time-constant grid point".into()))
}
