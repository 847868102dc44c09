use nalgebra::{DMatrix, DVector};

use super::{Bounds, Dataset, FitResult, ParametricModel, SolverOptions, Termination};
use crate::error::FitError;

const MAX_DAMPING: f64 = 1e20;
const MIN_DAMPING: f64 = 1e-15;

/// Levenberg–Marquardt with Marquardt diagonal scaling and box constraints.
///
/// Steps are only accepted when the weighted residual sum of squares does not
/// increase. Parameters sitting on a bound with the gradient pointing outward
/// are frozen for that step; trial points are clamped into the box.
pub fn least_squares<M: ParametricModel + ?Sized>(
    model: &M,
    data: &Dataset,
    init: &[f64],
    bounds: Option<&Bounds>,
    options: &SolverOptions,
) -> Result<FitResult, FitError> {
    let m = model.n_params();
    if init.len() != m {
        return Err(FitError::InvalidData(format!("model has {m} parameters, init has {}", init.len())));
    }
    let unbounded = Bounds::unbounded(m);
    let bounds = bounds.unwrap_or(&unbounded);
    if bounds.lower.len() != m || bounds.upper.len() != m {
        return Err(FitError::InvalidData("bounds length differs from parameter count".into()));
    }
    for (i, &p) in init.iter().enumerate() {
        if !p.is_finite() || p < bounds.lower[i] || p > bounds.upper[i] {
            return Err(FitError::InitOutOfBounds(format!(
                "p[{i}] = {p} not in [{}, {}]",
                bounds.lower[i], bounds.upper[i]
            )));
        }
    }

    let problem = Problem { model, data, bounds, options };
    let mut p = init.to_vec();
    let mut r = problem.residuals(&p).ok_or_else(|| FitError::NonFiniteModel { params: p.clone() })?;
    let mut cost = r.norm_squared();
    let initial_residual_norm = cost.sqrt();
    let mut damping = options.initial_damping;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;

    'outer: while iterations < options.max_iterations {
        if cost == 0.0 {
            termination = Termination::ZeroResidual;
            break;
        }
        iterations += 1;
        let jac = problem.jacobian(&p, &r)?;
        let jtj = jac.tr_mul(&jac);
        let grad = jac.tr_mul(&r);

        let free: Vec<usize> = (0..m)
            .filter(|&i| {
                let at_lower = p[i] <= bounds.lower[i] && grad[i] > 0.0;
                let at_upper = p[i] >= bounds.upper[i] && grad[i] < 0.0;
                !(at_lower || at_upper)
            })
            .collect();
        if free.is_empty() {
            termination = Termination::ParameterTolerance;
            break;
        }
        let max_diag = free.iter().map(|&i| jtj[(i, i)]).fold(0.0, f64::max);
        let diag_floor = if max_diag > 0.0 { 1e-12 * max_diag } else { 1.0 };

        loop {
            let k = free.len();
            let mut a = DMatrix::from_fn(k, k, |i, j| jtj[(free[i], free[j])]);
            for i in 0..k {
                a[(i, i)] += damping * jtj[(free[i], free[i])].max(diag_floor);
            }
            let rhs = DVector::from_fn(k, |i, _| -grad[free[i]]);
            let Some(step) = a.cholesky().map(|c| c.solve(&rhs)) else {
                damping *= 10.0;
                if damping > MAX_DAMPING {
                    termination = Termination::NoImprovement;
                    break 'outer;
                }
                continue;
            };

            let mut trial = p.clone();
            for (i, &idx) in free.iter().enumerate() {
                trial[idx] = (p[idx] + step[i]).clamp(bounds.lower[idx], bounds.upper[idx]);
            }
            let trial_r = problem.residuals(&trial);
            let trial_cost = trial_r.as_ref().map_or(f64::INFINITY, |v| v.norm_squared());

            if trial_cost <= cost {
                let step_norm = trial.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                let cost_change = (cost - trial_cost) / cost;
                p = trial;
                r = trial_r.expect("finite trial residuals");
                cost = trial_cost;
                damping = (damping * 0.1).max(MIN_DAMPING);
                if cost == 0.0 {
                    termination = Termination::ZeroResidual;
                    break 'outer;
                }
                if step_norm <= options.xtol * (p_norm + options.xtol) {
                    termination = Termination::ParameterTolerance;
                    break 'outer;
                }
                if cost_change <= options.ftol {
                    termination = Termination::ResidualTolerance;
                    break 'outer;
                }
                break;
            }
            damping *= 10.0;
            if damping > MAX_DAMPING {
                termination = Termination::NoImprovement;
                break 'outer;
            }
        }
    }

    let converged = termination != Termination::MaxIterations;
    let n = data.len();
    let mut warnings = Vec::new();
    let jac = problem.jacobian(&p, &r)?;
    let jtj = jac.tr_mul(&jac);
    let variance_scale = if options.scale_covariance && n > m { cost / (n - m) as f64 } else { 1.0 };
    let (covariance, standard_errors) = match jtj.clone().cholesky() {
        Some(chol) => {
            let inv = chol.inverse() * variance_scale;
            let se = (0..m).map(|i| inv[(i, i)].max(0.0).sqrt()).collect();
            let cov = (0..m).map(|i| (0..m).map(|j| inv[(i, j)]).collect()).collect();
            (Some(cov), se)
        }
        None => {
            warnings.push("normal matrix is singular; parameter errors are unbounded".to_string());
            (None, vec![f64::INFINITY; m])
        }
    };
    if !converged {
        warnings.push(format!("no convergence within {} iterations", options.max_iterations));
    }

    Ok(FitResult {
        parameter_names: (0..m).map(|i| format!("p{i}")).collect(),
        parameters: p,
        standard_errors,
        covariance,
        residual_norm: cost.sqrt(),
        initial_residual_norm,
        converged,
        iterations,
        termination,
        data_points: n,
        derived: Vec::new(),
        warnings,
    })
}

struct Problem<'a, M: ?Sized> {
    model: &'a M,
    data: &'a Dataset,
    bounds: &'a Bounds,
    options: &'a SolverOptions,
}

impl<M: ParametricModel + ?Sized> Problem<'_, M> {
    fn residuals(&self, p: &[f64]) -> Option<DVector<f64>> {
        let d = self.data;
        let r = DVector::from_fn(d.len(), |i, _| d.sqrt_weight(i) * (self.model.evaluate(d.x[i], p) - d.y[i]));
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn jacobian(&self, p: &[f64], r: &DVector<f64>) -> Result<DMatrix<f64>, FitError> {
        let (n, m) = (self.data.len(), p.len());
        let mut jac = DMatrix::zeros(n, m);
        let mut grad = vec![0.0; m];
        let analytic = self.model.gradient(self.data.x[0], p, &mut grad);
        if analytic {
            for i in 0..n {
                self.model.gradient(self.data.x[i], p, &mut grad);
                let w = self.data.sqrt_weight(i);
                for j in 0..m {
                    jac[(i, j)] = w * grad[j];
                }
            }
        } else {
            let mut shifted = p.to_vec();
            for j in 0..m {
                let mut h = self.options.fd_step * if p[j] != 0.0 { p[j].abs() } else { 1.0 };
                if p[j] + h > self.bounds.upper[j] {
                    h = -h;
                }
                shifted[j] = p[j] + h;
                let h = shifted[j] - p[j];
                let rj = self.residuals(&shifted).ok_or_else(|| FitError::NonFiniteModel { params: shifted.clone() })?;
                for i in 0..n {
                    jac[(i, j)] = (rj[i] - r[i]) / h;
                }
                shifted[j] = p[j];
            }
        }
        if jac.iter().any(|v| !v.is_finite()) {
            return Err(FitError::NonFiniteModel { params: p.to_vec() });
        }
        Ok(jac)
    }
}
