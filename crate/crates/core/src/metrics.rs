//! Accuracy measures for simulation replicates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, ModelFit, ODDS_EXPONENT_LIMIT};
use crate::simulate::GroundTruth;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `(1/2n) * sum_i (beta_hat' x_i - beta*' x_i)^2` on raw design rows.
    pub mse: f64,
    /// `sum_j |beta_hat_j - beta*_j|` on the raw scale.
    pub l1_error: f64,
    /// `|delta_hat_raw - delta0|`. The fitted intercept targets the
    /// case-control intercept, not the population `delta0`, so this is a
    /// diagnostic only.
    pub intercept_error_vs_delta0: f64,
    /// Max over evaluation points of `|exp(beta_hat' x) - exp(beta*' x)|`,
    /// baseline `x0 = 0`.
    pub sup_or_error: f64,
    pub exact_recovery: bool,
    pub inclusion: bool,
    pub k_hat: usize,
}

fn clamped_exp(t: f64) -> f64 {
    t.clamp(-ODDS_EXPONENT_LIMIT, ODDS_EXPONENT_LIMIT).exp()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Compares a fit against the simulation truth.
///
/// `or_points` are extra raw-scale points for the odds-ratio sup error, on
/// top of the design rows.
pub fn evaluate(
    fit: &ModelFit,
    truth: &GroundTruth,
    data: &Dataset,
    or_points: Option<&[Vec<f64>]>,
) -> Result<EvalReport> {
    let m = data.m();
    for len in [fit.coefficients_raw.len(), truth.beta_star.len()] {
        if len != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: len,
            });
        }
    }
    if let Some(p) = or_points.and_then(|pts| pts.iter().find(|p| p.len() != m)) {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: p.len(),
        });
    }
    let fitted = data.raw_linear_predictor(0.0, &fit.coefficients_raw);
    let target = data.raw_linear_predictor(0.0, &truth.beta_star);
    let mse = fitted
        .iter()
        .zip(&target)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / data.n_rows() as f64;

    let mut sup_or_error = fitted
        .iter()
        .zip(&target)
        .map(|(&a, &b)| (clamped_exp(a) - clamped_exp(b)).abs())
        .fold(0.0, f64::max);
    for x in or_points.unwrap_or(&[]) {
        let err = (clamped_exp(dot(&fit.coefficients_raw, x)) - clamped_exp(dot(&truth.beta_star, x))).abs();
        sup_or_error = sup_or_error.max(err);
    }

    let l1_error = fit
        .coefficients_raw
        .iter()
        .zip(&truth.beta_star)
        .map(|(a, b)| (a - b).abs())
        .sum();
    let exact_recovery = fit.active_set == truth.support;
    let inclusion = truth.support.iter().all(|j| fit.active_set.binary_search(j).is_ok());
    Ok(EvalReport {
        mse,
        l1_error,
        intercept_error_vs_delta0: (fit.intercept_raw - truth.intercept0).abs(),
        sup_or_error,
        exact_recovery,
        inclusion,
        k_hat: fit.active_count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub replicates: usize,
    pub median_mse: f64,
    pub median_l1_error: f64,
    pub median_sup_or_error: f64,
    /// Percentages in `[0, 100]`.
    pub exact_recovery_pct: f64,
    pub inclusion_pct: f64,
    pub median_k_hat: f64,
}

/// Median with the midpoint convention for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

/// Percentage of `true` flags.
pub fn percentage(flags: impl IntoIterator<Item = bool>) -> f64 {
    let (hits, total) = flags
        .into_iter()
        .fold((0usize, 0usize), |(h, t), f| (h + f as usize, t + 1));
    if total == 0 {
        0.0
    } else {
        100.0 * hits as f64 / total as f64
    }
}

pub fn aggregate(reports: &[EvalReport]) -> Result<Summary> {
    if reports.is_empty() {
        return Err(Error::Empty("no reports to aggregate".into()));
    }
    let column = |f: fn(&EvalReport) -> f64| -> f64 {
        median(&reports.iter().map(f).collect::<Vec<_>>()).unwrap_or(f64::NAN)
    };
    Ok(Summary {
        replicates: reports.len(),
        median_mse: column(|r| r.mse),
        median_l1_error: column(|r| r.l1_error),
        median_sup_or_error: column(|r| r.sup_or_error),
        exact_recovery_pct: percentage(reports.iter().map(|r| r.exact_recovery)),
        inclusion_pct: percentage(reports.iter().map(|r| r.inclusion)),
        median_k_hat: column(|r| r.k_hat as f64),
    })
}
