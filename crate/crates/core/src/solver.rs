//! Fixed-penalty solver for the l1-penalized prospective objective.
//!
//! Each outer step builds the weighted quadratic model of the log-likelihood at
//! the current iterate and minimizes model + penalty by cyclic coordinate
//! descent with soft-thresholding, accelerated by an exact sign-constrained
//! solve on the active coordinates. The step toward the model minimizer is
//! backtracked on the true objective, so objective values never increase.
//! Optimality is certified by the KKT residual, not by parameter change.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    expit, gradient_from_eta, negative_log_likelihood, Dataset, Gradient, ModelFit, Params,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Largest KKT residual accepted as optimal.
    pub tolerance: f64,
    /// Budget of coordinate sweeps, summed over all outer steps.
    pub max_iterations: usize,
    /// Penalty used in place of an ill-posed `lambda = 0`.
    pub lambda_floor: f64,
    /// Starting point; the zero fit is used when absent.
    pub warm_start: Option<Params>,
    /// A standardized coefficient beyond this magnitude is treated as a
    /// diverging (separated) fit and the solver gives up.
    pub divergence_bound: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 10_000,
            lambda_floor: 1e-10,
            warm_start: None,
            divergence_bound: 1e3,
        }
    }
}

impl SolverConfig {
    pub fn with_warm_start(&self, start: Option<Params>) -> Self {
        Self {
            warm_start: start,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be >= 1".into()));
        }
        if !(self.lambda_floor >= 0.0) || !self.lambda_floor.is_finite() {
            return Err(Error::InvalidArgument("lambda_floor must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-coordinate KKT residuals of a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    pub max: f64,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

#[inline]
fn soft_threshold(b: f64, lambda: f64) -> f64 {
    if b > lambda {
        b - lambda
    } else if b < -lambda {
        b + lambda
    } else {
        0.0
    }
}

fn kkt_from_gradient(grad: &Gradient, beta: &[f64], lambda: f64) -> KktReport {
    let coefficients: Vec<f64> = grad
        .coefficients
        .iter()
        .zip(beta)
        .map(|(&g, &b)| {
            if b != 0.0 {
                (g + lambda * b.signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            }
        })
        .collect();
    let intercept = grad.intercept.abs();
    let max = coefficients.iter().fold(intercept, |acc, &r| acc.max(r));
    KktReport {
        max,
        intercept,
        coefficients,
    }
}

/// KKT residual of `fit` at its own penalty on `data`.
pub fn kkt_residual(fit: &ModelFit, data: &Dataset) -> Result<KktReport> {
    let params = fit.params();
    let grad = crate::model::prospective_gradient(&params, data)?;
    Ok(kkt_from_gradient(&grad, &params.coefficients, fit.lambda))
}

/// `n_hat(lambda)`: number of nonzero coefficients.
pub fn active_count(fit: &ModelFit) -> usize {
    fit.active_count()
}

/// Smallest penalty at which the all-zero coefficient vector is optimal.
///
/// On balanced data the intercept solving the zero-slope problem is 0.
pub fn lambda_max(data: &Dataset) -> f64 {
    let eta = vec![0.0; data.n_rows()];
    gradient_from_eta(&eta, data)
        .coefficients
        .iter()
        .fold(0.0, |acc, g| acc.max(g.abs()))
}

/// Minimizes the penalized objective at `lambda`.
///
/// A fit that exhausts its budget is returned with `converged = false`.
pub fn fit_l1_logistic(data: &Dataset, lambda: f64, config: &SolverConfig) -> Result<ModelFit> {
    fit_traced(data, lambda, config, None)
}

/// As [`fit_l1_logistic`], pushing the objective value after every outer step
/// into `trace`.
pub fn fit_traced(
    data: &Dataset,
    lambda: f64,
    config: &SolverConfig,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<ModelFit> {
    config.validate()?;
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    if let Some(start) = &config.warm_start {
        if start.coefficients.len() != data.m() {
            return Err(Error::DimensionMismatch {
                expected: data.m(),
                found: start.coefficients.len(),
            });
        }
    }
    if lambda == 0.0 {
        let floored = || -> Result<ModelFit> {
            let mut fit = solve(data, config.lambda_floor, config, None)?;
            fit.floor_substituted = true;
            Ok(fit)
        };
        if data.m() >= data.n_rows() {
            return floored();
        }
        let fit = solve(data, 0.0, config, trace.as_deref_mut())?;
        if fit.converged {
            return Ok(fit);
        }
        // no finite MLE within budget: treat as separation
        return floored();
    }
    solve(data, lambda, config, trace)
}

struct Workspace<'a> {
    data: &'a Dataset,
    lambda: f64,
    n_rows: usize,
}

impl Workspace<'_> {
    fn objective(&self, eta: &[f64], beta: &[f64]) -> f64 {
        negative_log_likelihood(eta, self.data.n())
            + self.lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    fn label(&self, i: usize) -> f64 {
        if i >= self.data.n() {
            1.0
        } else {
            0.0
        }
    }
}

const ACTIVE_SWEEPS_BEFORE_NEWTON: usize = 5;

enum NewtonStep {
    Solved,
    Failed,
}

/// Minimizes the weighted quadratic model over the current nonzero
/// coordinates with their signs held fixed. A coordinate that reaches zero
/// leaves the set and the reduced system is solved again. Returns `Failed`
/// when no full solve succeeded; any partial progress is kept, and it never
/// increases the model objective.
fn active_newton(
    data: &Dataset,
    lambda: f64,
    weights: &[f64],
    inv_n: f64,
    cand: &mut Params,
    resid: &mut [f64],
) -> NewtonStep {
    let active: Vec<usize> = (0..cand.coefficients.len())
        .filter(|&j| cand.coefficients[j] != 0.0)
        .collect();
    let n_rows = weights.len();
    if active.is_empty() || active.len() + 1 > n_rows {
        return NewtonStep::Failed;
    }
    let dim = active.len() + 1;
    // rows scaled by sqrt(w), so H = Xw' Xw / N
    let mut xw = DMatrix::<f64>::zeros(n_rows, dim);
    let mut rw = DVector::<f64>::zeros(n_rows);
    for i in 0..n_rows {
        let sw = weights[i].sqrt();
        xw[(i, 0)] = sw;
        rw[i] = sw * resid[i];
    }
    for (a, &j) in active.iter().enumerate() {
        for (i, x) in data.col(j).iter().enumerate() {
            xw[(i, a + 1)] = xw[(i, 0)] * x;
        }
    }
    let h = (xw.transpose() * &xw) * inv_n;
    // smooth part of the model gradient, kept current as the iterate moves
    let mut g = xw.tr_mul(&rw) * inv_n;
    // model positions: 0 is the intercept, a + 1 is `active[a]` in the
    // original order
    let all = active;
    let mut keep: Vec<usize> = (0..dim).collect();
    let mut total = DVector::<f64>::zeros(dim);
    let mut outcome = NewtonStep::Failed;
    for _ in 0..dim {
        let k = keep.len();
        let sub = DMatrix::<f64>::from_fn(k, k, |a, b| h[(keep[a], keep[b])]);
        let rhs = DVector::<f64>::from_fn(k, |a, _| {
            let p = keep[a];
            if p == 0 {
                g[0]
            } else {
                g[p] - lambda * cand.coefficients[all[p - 1]].signum()
            }
        });
        let Some(chol) = sub.cholesky() else {
            break;
        };
        let d = chol.solve(&rhs);
        if !d.iter().all(|v| v.is_finite()) {
            break;
        }
        // stop at the first zero crossing
        let mut step = 1.0;
        let mut leaving = None;
        for a in 1..k {
            let j = all[keep[a] - 1];
            let old = cand.coefficients[j];
            let new = old + d[a];
            if new == 0.0 || new.signum() != old.signum() {
                let t = -old / d[a];
                if t <= step {
                    step = t;
                    leaving = Some(a);
                }
            }
        }
        let mut moved = DVector::<f64>::zeros(dim);
        for a in 0..k {
            let p = keep[a];
            moved[p] = if p == 0 {
                step * d[a]
            } else if Some(a) == leaving {
                -cand.coefficients[all[p - 1]]
            } else {
                step * d[a]
            };
            if p == 0 {
                cand.intercept += moved[p];
            } else {
                let j = all[p - 1];
                cand.coefficients[j] += moved[p];
            }
        }
        g -= &h * &moved;
        total += &moved;
        match leaving {
            Some(a) => {
                cand.coefficients[all[keep[a] - 1]] = 0.0;
                keep.remove(a);
            }
            None => {
                outcome = NewtonStep::Solved;
                break;
            }
        }
    }
    let d0 = total[0];
    if d0 != 0.0 {
        resid.iter_mut().for_each(|r| *r -= d0);
    }
    for (a, &j) in all.iter().enumerate() {
        let delta = total[a + 1];
        if delta != 0.0 {
            resid.iter_mut().zip(data.col(j)).for_each(|(r, x)| *r -= delta * x);
        }
    }
    outcome
}

fn solve(
    data: &Dataset,
    lambda: f64,
    config: &SolverConfig,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<ModelFit> {
    let ws = Workspace {
        data,
        lambda,
        n_rows: data.n_rows(),
    };
    let m = data.m();
    let inv_n = 1.0 / ws.n_rows as f64;

    let mut params = config.warm_start.clone().unwrap_or_else(|| Params::zeros(m));
    let mut eta = data.linear_predictor(&params);
    let mut objective = ws.objective(&eta, &params.coefficients);
    if let Some(t) = trace.as_deref_mut() {
        t.push(objective);
    }

    let mut sweeps = 0usize;
    let mut weights = vec![0.0; ws.n_rows];
    let mut resid = vec![0.0; ws.n_rows];
    let mut curvature = vec![0.0; m];
    let mut kkt;

    loop {
        let grad = gradient_from_eta(&eta, data);
        kkt = kkt_from_gradient(&grad, &params.coefficients, lambda).max;
        if kkt <= config.tolerance || sweeps >= config.max_iterations {
            break;
        }
        if params
            .coefficients
            .iter()
            .chain(std::iter::once(&params.intercept))
            .any(|b| b.abs() > config.divergence_bound)
        {
            break;
        }

        // weighted quadratic model: working residual z - eta = (y - p) / w
        for (i, &t) in eta.iter().enumerate() {
            let p = expit(t);
            let w = (p * (1.0 - p)).max(1e-10);
            weights[i] = w;
            resid[i] = (ws.label(i) - p) / w;
        }
        let sum_w: f64 = weights.iter().sum::<f64>() * inv_n;
        for (j, c) in curvature.iter_mut().enumerate() {
            *c = data
                .col(j)
                .iter()
                .zip(&weights)
                .map(|(x, w)| w * x * x)
                .sum::<f64>()
                * inv_n;
        }
        let initial_resid = resid.clone();
        let mut candidate = params.clone();
        let inner_tol = (0.1 * kkt).clamp(1e-13, 1e-4);

        let sweep = |only_active: bool, cand: &mut Params, resid: &mut [f64]| -> f64 {
            let mut max_change = 0.0f64;
            let shift = resid
                .iter()
                .zip(&weights)
                .map(|(r, w)| w * r)
                .sum::<f64>()
                * inv_n
                / sum_w;
            if shift != 0.0 {
                cand.intercept += shift;
                resid.iter_mut().for_each(|r| *r -= shift);
                max_change = max_change.max(sum_w * shift.abs());
            }
            for j in 0..m {
                let old = cand.coefficients[j];
                if only_active && old == 0.0 {
                    continue;
                }
                let a = curvature[j];
                if a <= 0.0 {
                    continue;
                }
                let col = data.col(j);
                let b = col
                    .iter()
                    .zip(resid.iter())
                    .zip(&weights)
                    .map(|((x, r), w)| w * x * r)
                    .sum::<f64>()
                    * inv_n
                    + a * old;
                let new = soft_threshold(b, lambda) / a;
                if new != old {
                    let d = new - old;
                    resid.iter_mut().zip(col).for_each(|(r, x)| *r -= d * x);
                    cand.coefficients[j] = new;
                    max_change = max_change.max(a * d.abs());
                }
            }
            max_change
        };

        let inner_budget = config.max_iterations.saturating_sub(sweeps).max(1);
        let mut inner = 0usize;
        loop {
            let change = sweep(false, &mut candidate, &mut resid);
            inner += 1;
            if change < inner_tol || inner >= inner_budget {
                break;
            }
            // cheap active sweeps first; an ill-conditioned model gets the
            // exact active-set solve instead
            let mut local = 0;
            loop {
                let change = sweep(true, &mut candidate, &mut resid);
                inner += 1;
                local += 1;
                if change < inner_tol || inner >= inner_budget {
                    break;
                }
                if local == ACTIVE_SWEEPS_BEFORE_NEWTON {
                    let newton = active_newton(data, lambda, &weights, inv_n, &mut candidate, &mut resid);
                    if matches!(newton, NewtonStep::Solved) {
                        break;
                    }
                }
            }
            if inner >= inner_budget {
                break;
            }
        }
        sweeps += inner;

        // step direction in parameter and predictor space
        let d_eta: Vec<f64> = initial_resid.iter().zip(&resid).map(|(a, b)| a - b).collect();
        let d_intercept = candidate.intercept - params.intercept;
        let d_beta: Vec<f64> = candidate
            .coefficients
            .iter()
            .zip(&params.coefficients)
            .map(|(a, b)| a - b)
            .collect();
        let model_decrease = grad.intercept * d_intercept
            + grad
                .coefficients
                .iter()
                .zip(&d_beta)
                .map(|(g, d)| g * d)
                .sum::<f64>()
            + lambda * (candidate.l1_norm() - params.l1_norm());

        let slack = 1e-13 * (1.0 + objective.abs());
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let trial_eta: Vec<f64> = eta.iter().zip(&d_eta).map(|(e, d)| e + step * d).collect();
            // the full step keeps exact zeros from the soft-threshold
            let trial_beta: Vec<f64> = if step == 1.0 {
                candidate.coefficients.clone()
            } else {
                params
                    .coefficients
                    .iter()
                    .zip(&d_beta)
                    .map(|(b, d)| b + step * d)
                    .collect()
            };
            let value = ws.objective(&trial_eta, &trial_beta);
            let sufficient = value <= objective + 1e-4 * step * model_decrease;
            let flat = step == 1.0 && model_decrease <= 0.0 && value <= objective + slack;
            if sufficient || flat {
                accepted = Some((trial_eta, trial_beta, value));
                break;
            }
            step *= 0.5;
        }
        let Some((new_eta, new_beta, value)) = accepted else {
            // no descent possible at working precision
            break;
        };
        params.intercept += step * d_intercept;
        params.coefficients = new_beta;
        eta = new_eta;
        objective = value.min(objective + slack);
        if let Some(t) = trace.as_deref_mut() {
            t.push(value);
        }
    }

    let converged = kkt <= config.tolerance;
    ModelFit::assemble(data, params, lambda, converged, sweeps, kkt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        let rows = vec![
            vec![0.1, 1.2],
            vec![-0.7, 0.3],
            vec![-1.3, -0.4],
            vec![0.2, 0.9],
            vec![1.4, -0.2],
            vec![0.9, 0.1],
            vec![-0.3, 1.1],
            vec![0.8, -1.0],
        ];
        Dataset::from_labeled_rows(&rows, &[false, false, false, false, true, true, true, true])
            .unwrap()
    }

    #[test]
    fn soft_threshold_ties_stay_at_zero() {
        assert_eq!(soft_threshold(1.0, 1.0), 0.0);
        assert_eq!(soft_threshold(-1.0, 1.0), 0.0);
        assert_eq!(soft_threshold(1.5, 1.0), 0.5);
        assert_eq!(soft_threshold(-1.5, 1.0), -0.5);
    }

    #[test]
    fn above_lambda_max_everything_is_zero() {
        let d = small();
        let lmax = lambda_max(&d);
        let fit = fit_l1_logistic(&d, lmax, &SolverConfig::default()).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.active_count(), 0);
        assert_eq!(fit.intercept, 0.0);
        assert_eq!(kkt_residual(&fit, &d).unwrap().max, 0.0);
    }

    #[test]
    fn converged_fit_certifies_kkt() {
        let d = small();
        let lmax = lambda_max(&d);
        for frac in [0.9, 0.5, 0.1, 0.01] {
            let fit = fit_l1_logistic(&d, frac * lmax, &SolverConfig::default()).unwrap();
            assert!(fit.converged, "frac {frac}");
            let report = kkt_residual(&fit, &d).unwrap();
            assert!(report.max <= 1e-8);
            assert!((report.max - fit.kkt_violation).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_lambda_on_wide_data_uses_floor() {
        let rows = vec![vec![0.1, 1.2, 0.3], vec![-0.7, 0.3, 0.5]];
        let d = Dataset::from_labeled_rows(&rows, &[false, true]).unwrap();
        let fit = fit_l1_logistic(&d, 0.0, &SolverConfig::default()).unwrap();
        assert!(fit.floor_substituted);
        assert_eq!(fit.lambda, 1e-10);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let d = small();
        let cfg = SolverConfig {
            tolerance: 0.0,
            ..Default::default()
        };
        assert!(fit_l1_logistic(&d, 0.1, &cfg).is_err());
        let cfg = SolverConfig {
            max_iterations: 0,
            ..Default::default()
        };
        assert!(fit_l1_logistic(&d, 0.1, &cfg).is_err());
        assert!(fit_l1_logistic(&d, -1.0, &SolverConfig::default()).is_err());
        assert!(fit_l1_logistic(&d, f64::NAN, &SolverConfig::default()).is_err());
    }

    #[test]
    fn budget_exhaustion_reports_nonconvergence() {
        let d = small();
        let cfg = SolverConfig {
            max_iterations: 1,
            ..Default::default()
        };
        let fit = fit_l1_logistic(&d, 0.01 * lambda_max(&d), &cfg).unwrap();
        assert!(!fit.converged);
        assert!(fit.kkt_violation > cfg.tolerance);
    }
}
