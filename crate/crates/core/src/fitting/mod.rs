//! Damped least squares and the concrete spectroscopy models.

mod polarization;
mod recovery;
mod solver;
mod voigt4;

use serde::{Deserialize, Serialize};

use crate::error::FitError;

pub use polarization::{fit_polarization_model, fit_polarization_model_weighted, PolarizationBranching, PolarizationModel};
pub use recovery::{fit_exponential_recovery, RecoveryModel};
pub use solver::least_squares;
pub use voigt4::{fit_four_voigt, FourVoigtModel};

/// A model `y = f(x; p)` with an optional analytic gradient in `p`.
pub trait ParametricModel {
    fn n_params(&self) -> usize;

    fn evaluate(&self, x: f64, params: &[f64]) -> f64;

    /// Write `∂f/∂p` into `grad` and return `true`, or return `false` to have
    /// the solver use finite differences.
    fn gradient(&self, _x: f64, _params: &[f64], _grad: &mut [f64]) -> bool {
        false
    }
}

/// Wraps a closure as a [`ParametricModel`].
pub struct FnModel<F> {
    n_params: usize,
    f: F,
}

impl<F: Fn(f64, &[f64]) -> f64> FnModel<F> {
    pub fn new(n_params: usize, f: F) -> Self {
        Self { n_params, f }
    }
}

impl<F: Fn(f64, &[f64]) -> f64> ParametricModel for FnModel<F> {
    fn n_params(&self) -> usize {
        self.n_params
    }

    fn evaluate(&self, x: f64, params: &[f64]) -> f64 {
        (self.f)(x, params)
    }
}

/// Observations with optional weights (`1/σ²`; unit weights when absent).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub weights: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self, FitError> {
        Self::weighted(x, y, None)
    }

    pub fn weighted(x: Vec<f64>, y: Vec<f64>, weights: Option<Vec<f64>>) -> Result<Self, FitError> {
        if x.len() != y.len() {
            return Err(FitError::InvalidData(format!("x has {} points, y has {}", x.len(), y.len())));
        }
        if x.is_empty() {
            return Err(FitError::TooFewPoints { needed: 1, got: 0 });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(FitError::InvalidData("data contain non-finite values".into()));
        }
        if let Some(w) = &weights {
            if w.len() != x.len() {
                return Err(FitError::InvalidData("weights length differs from data".into()));
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(FitError::InvalidData("weights must be finite and >= 0".into()));
            }
        }
        Ok(Self { x, y, weights })
    }

    /// Poisson-style weights `1/max(|y|, floor)` for count-like data.
    pub fn with_poisson_weights(mut self, floor: f64) -> Self {
        self.weights = Some(self.y.iter().map(|y| 1.0 / y.abs().max(floor)).collect());
        self
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub(crate) fn sqrt_weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i].sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(n: usize) -> Self {
        Self { lower: vec![f64::NEG_INFINITY; n], upper: vec![f64::INFINITY; n] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Relative parameter-change threshold.
    pub xtol: f64,
    /// Relative change threshold for the residual sum of squares.
    pub ftol: f64,
    /// Relative forward-difference step.
    pub fd_step: f64,
    pub initial_damping: f64,
    /// Scale the covariance by the reduced chi-square.
    pub scale_covariance: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iterations: 500, xtol: 1e-8, ftol: 1e-10, fd_step: 1e-6, initial_damping: 1e-3, scale_covariance: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ParameterTolerance,
    ResidualTolerance,
    ZeroResidual,
    NoImprovement,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedQuantity {
    pub name: String,
    pub value: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub parameter_names: Vec<String>,
    pub parameters: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub covariance: Option<Vec<Vec<f64>>>,
    pub residual_norm: f64,
    pub initial_residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub termination: Termination,
    pub data_points: usize,
    pub derived: Vec<DerivedQuantity>,
    pub warnings: Vec<String>,
}

impl FitResult {
    fn index(&self, name: &str) -> Option<usize> {
        self.parameter_names.iter().position(|n| n == name)
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.parameters[i])
    }

    pub fn error(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.standard_errors[i])
    }

    pub fn derived(&self, name: &str) -> Option<&DerivedQuantity> {
        self.derived.iter().find(|d| d.name == name)
    }

    pub fn covariance_entry(&self, a: &str, b: &str) -> Option<f64> {
        let (i, j) = (self.index(a)?, self.index(b)?);
        self.covariance.as_ref().map(|c| c[i][j])
    }

    /// Standard error of `Σ cᵢ pᵢ` for the given linear combination.
    pub(crate) fn linear_combination_error(&self, coeffs: &[f64]) -> f64 {
        match &self.covariance {
            Some(c) => {
                let mut var = 0.0;
                for (i, ci) in coeffs.iter().enumerate() {
                    for (j, cj) in coeffs.iter().enumerate() {
                        var += ci * cj * c[i][j];
                    }
                }
                var.max(0.0).sqrt()
            }
            None => f64::INFINITY,
        }
    }

    /// Rename parameters and map internal (partly logarithmic) parameters back
    /// to natural ones, carrying the covariance along.
    pub(crate) fn into_natural(mut self, names: &[&str], log_mask: &[bool]) -> Self {
        let scale: Vec<f64> = self
            .parameters
            .iter()
            .zip(log_mask)
            .map(|(q, &is_log)| if is_log { q.exp() } else { 1.0 })
            .collect();
        for (i, &is_log) in log_mask.iter().enumerate() {
            if is_log {
                self.parameters[i] = self.parameters[i].exp();
                self.standard_errors[i] *= scale[i];
            }
        }
        if let Some(c) = &mut self.covariance {
            for (i, row) in c.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v *= scale[i] * scale[j];
                }
            }
        }
        self.parameter_names = names.iter().map(|s| s.to_string()).collect();
        self
    }
}

/// Evaluates a model with some parameters stored as logarithms.
pub(crate) struct LogParameterized<'a, M: ?Sized> {
    pub inner: &'a M,
    pub log_mask: &'a [bool],
}

impl<M: ParametricModel + ?Sized> LogParameterized<'_, M> {
    fn natural(&self, q: &[f64]) -> Vec<f64> {
        q.iter().zip(self.log_mask).map(|(v, &is_log)| if is_log { v.exp() } else { *v }).collect()
    }
}

impl<M: ParametricModel + ?Sized> ParametricModel for LogParameterized<'_, M> {
    fn n_params(&self) -> usize {
        self.inner.n_params()
    }

    fn evaluate(&self, x: f64, params: &[f64]) -> f64 {
        self.inner.evaluate(x, &self.natural(params))
    }

    fn gradient(&self, x: f64, params: &[f64], grad: &mut [f64]) -> bool {
        let p = self.natural(params);
        if !self.inner.gradient(x, &p, grad) {
            return false;
        }
        for ((g, v), &is_log) in grad.iter_mut().zip(&p).zip(self.log_mask) {
            if is_log {
                *g *= v;
            }
        }
        true
    }
}
