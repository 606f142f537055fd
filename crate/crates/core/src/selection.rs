//! Dimension-stabilized cross-validation with a BIC-type penalty.
//!
//! For every fold, a path sketch on the training part yields one support per
//! size `k`; each support is refit without penalty and scored on the held-out
//! part. Sizes found in every fold are averaged, penalized by
//! `0.5 * k * log(2n) / 2n`, and the minimizer is located on the full data by
//! bisection between the neighbouring sketch entries.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{expit, log1pexp, negative_log_likelihood, DataSlice, Dataset, ModelFit, Params};
use crate::path::{bbm, default_k_max, gbm, nominal_floor_count, PathSketch};
use crate::simulate::rng_stream;
use crate::solver::{fit_l1_logistic, lambda_max, SolverConfig};

/// Default cap on the sketch depth used during selection.
pub const DEFAULT_SELECTION_K_CAP: usize = 25;

/// Default bisection accuracy relative to the dataset's `lambda_max`.
pub const DEFAULT_RELATIVE_ALPHA: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub p: usize,
    /// Fold index per dataset row.
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn holdout_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn training_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }
}

/// Per-class shuffle followed by round-robin assignment, so every fold holds
/// the same number of cases as controls.
pub fn stratified_folds(data: &Dataset, p: usize, seed: u64) -> Result<FoldPlan> {
    let n = data.n();
    if p == 0 || p > n {
        return Err(Error::FoldCount { p, n });
    }
    let mut assignments = vec![0; data.n_rows()];
    for (stream, range) in [(100u64, 0..n), (101u64, n..2 * n)] {
        let mut rows: Vec<usize> = range.collect();
        rows.shuffle(&mut rng_stream(seed, stream));
        for (pos, row) in rows.into_iter().enumerate() {
            assignments[row] = pos % p;
        }
    }
    Ok(FoldPlan { p, assignments })
}

const NEWTON_TOLERANCE: f64 = 1e-10;
const NEWTON_MAX_STEPS: usize = 100;

/// Unpenalized logistic MLE over the intercept and the `support` columns.
///
/// Coefficients outside the support are exactly zero. If Newton's method
/// cannot reach a finite optimum (separation), the support problem is solved
/// with the l1 solver at `lambda_floor` and the fit is flagged.
pub fn refit_mle(data: &Dataset, support: &[usize], config: &SolverConfig) -> Result<ModelFit> {
    let m = data.m();
    if support.len() >= data.n_rows() {
        return Err(Error::InvalidArgument(format!(
            "support of size {} needs more than {} observations",
            support.len(),
            data.n_rows()
        )));
    }
    if support.iter().any(|&j| j >= m) {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: support.iter().max().map_or(0, |j| j + 1),
        });
    }
    if support.is_empty() {
        // balanced design: the intercept-only MLE is logit(1/2) = 0
        return ModelFit::assemble(data, Params::zeros(m), 0.0, true, 0, 0.0);
    }
    let restricted = data.restrict_columns(support)?;
    let embed = |sub: &[f64]| -> Vec<f64> {
        let mut full = vec![0.0; m];
        for (&j, &b) in support.iter().zip(sub) {
            full[j] = b;
        }
        full
    };
    match newton_mle(&restricted, config.divergence_bound) {
        Some((params, steps, grad_max)) => {
            let full = Params::new(params.intercept, embed(&params.coefficients));
            ModelFit::assemble(data, full, 0.0, grad_max <= NEWTON_TOLERANCE, steps, grad_max)
        }
        None => {
            let fit = fit_l1_logistic(&restricted, config.lambda_floor, &config.with_warm_start(None))?;
            let full = Params::new(fit.intercept, embed(&fit.coefficients));
            let mut out = ModelFit::assemble(
                data,
                full,
                fit.lambda,
                fit.converged,
                fit.iterations,
                fit.kkt_violation,
            )?;
            out.floor_substituted = true;
            Ok(out)
        }
    }
}

/// Damped Newton on the full (small) design; `None` on divergence or a
/// singular Hessian.
fn newton_mle(data: &Dataset, bound: f64) -> Option<(Params, usize, f64)> {
    let n_rows = data.n_rows();
    let dim = data.m() + 1;
    let inv_n = 1.0 / n_rows as f64;
    let design = DMatrix::from_fn(n_rows, dim, |i, j| if j == 0 { 1.0 } else { data.col(j - 1)[i] });
    let labels = DVector::from_fn(n_rows, |i, _| if data.is_case(i) { 1.0 } else { 0.0 });
    let mut theta = DVector::<f64>::zeros(dim);
    let loss = |theta: &DVector<f64>| -> f64 {
        let eta = &design * theta;
        negative_log_likelihood(eta.as_slice(), data.n())
    };
    let mut value = loss(&theta);
    for step in 0..NEWTON_MAX_STEPS {
        let eta = &design * &theta;
        let probs = eta.map(expit);
        let grad = design.tr_mul(&(&probs - &labels)) * inv_n;
        let grad_max = grad.amax();
        if grad_max <= NEWTON_TOLERANCE {
            let params = Params::new(theta[0], theta.as_slice()[1..].to_vec());
            return Some((params, step, grad_max));
        }
        let weights = probs.map(|p| p * (1.0 - p));
        let mut weighted = design.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= weights[i];
        }
        let hessian = design.tr_mul(&weighted) * inv_n;
        let direction = hessian.cholesky()?.solve(&(-&grad));
        let slope = grad.dot(&direction);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &theta + &direction * t;
            let trial_value = loss(&trial);
            if trial_value <= value + 1e-4 * t * slope || (t == 1.0 && trial_value <= value + 1e-14) {
                theta = trial;
                value = trial_value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || theta.amax() > bound {
            return None;
        }
    }
    None
}

/// Scaled negative log-likelihood of a fit on held-out raw rows, normalized
/// by the number of held-out rows.
pub fn cv_log_loss(fit: &ModelFit, holdout: &DataSlice) -> f64 {
    let eta = holdout.raw_linear_predictor(fit.intercept_raw, &fit.coefficients_raw);
    let total: f64 = eta
        .iter()
        .zip(holdout.labels())
        .map(|(&t, &case)| if case { log1pexp(-t) } else { log1pexp(t) })
        .sum();
    total / holdout.n_rows() as f64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Number of folds.
    pub folds: usize,
    /// Absolute bisection accuracy; `None` means `DEFAULT_RELATIVE_ALPHA`
    /// times each dataset's own `lambda_max`.
    pub alpha: Option<f64>,
    /// Cap on sketch depth; `None` means `DEFAULT_SELECTION_K_CAP`.
    pub k_max: Option<usize>,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            alpha: None,
            k_max: None,
            seed: 0,
            solver: SolverConfig::default(),
        }
    }
}

impl SelectionConfig {
    fn alpha_for(&self, data: &Dataset) -> f64 {
        self.alpha
            .unwrap_or_else(|| DEFAULT_RELATIVE_ALPHA * lambda_max(data))
    }

    fn k_max_for(&self, data: &Dataset) -> usize {
        default_k_max(data).min(self.k_max.unwrap_or(DEFAULT_SELECTION_K_CAP))
    }
}

/// One `(k, fold)` cell of the cross-validation trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRecord {
    pub k: usize,
    pub fold: usize,
    pub r: f64,
    pub support: Vec<usize>,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionValue {
    pub k: usize,
    /// Fold-averaged held-out loss.
    pub cv_loss: f64,
    pub criterion: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionResult {
    pub k_hat: usize,
    pub criterion: Vec<CriterionValue>,
    pub cv_trace: Vec<CvRecord>,
    /// Penalty located on the full data; `None` when no dimension survived.
    pub final_r: Option<f64>,
    pub final_fit: ModelFit,
    pub skipped_k: Vec<usize>,
    /// The final fit does not have exactly `k_hat` nonzeros, or no
    /// dimension survived every fold.
    pub degraded: bool,
    pub all_dimensions_skipped: bool,
    /// Solver calls over all fold sketches plus the full-data search.
    pub solver_calls: usize,
}

/// `0.5 * k * log(2n) / (2n)`.
pub fn bic_penalty(k: usize, n_rows: usize) -> f64 {
    0.5 * k as f64 * (n_rows as f64).ln() / n_rows as f64
}

/// Smallest `k` attaining the minimum criterion.
pub fn argmin_criterion(values: &[CriterionValue]) -> Option<usize> {
    values
        .iter()
        .min_by(|a, b| a.criterion.total_cmp(&b.criterion).then(a.k.cmp(&b.k)))
        .map(|v| v.k)
}

struct FoldOutcome {
    records: Vec<CvRecord>,
    solver_calls: usize,
}

fn run_fold(data: &Dataset, plan: &FoldPlan, fold: usize, config: &SelectionConfig) -> Result<FoldOutcome> {
    let train = data.subset(&plan.training_rows(fold))?;
    let holdout = data.slice(&plan.holdout_rows(fold));
    let sketch = gbm(&train, config.alpha_for(&train), &config.solver, config.k_max_for(&train))?;
    let mut records = Vec::with_capacity(sketch.entries.len());
    for (&k, entry) in &sketch.entries {
        let refit = refit_mle(&train, &entry.fit.active_set, &config.solver)?;
        records.push(CvRecord {
            k,
            fold,
            r: entry.r,
            support: entry.fit.active_set.clone(),
            loss: cv_log_loss(&refit, &holdout),
        });
    }
    Ok(FoldOutcome {
        records,
        solver_calls: sketch.solver_calls,
    })
}

/// Runs the full variable-selection procedure.
pub fn select(data: &Dataset, config: &SelectionConfig) -> Result<SelectionResult> {
    let plan = stratified_folds(data, config.folds, config.seed)?;
    let outcomes: Vec<FoldOutcome> = (0..plan.p)
        .into_par_iter()
        .map(|fold| run_fold(data, &plan, fold, config))
        .collect::<Result<_>>()?;
    let mut solver_calls: usize = outcomes.iter().map(|o| o.solver_calls).sum();
    let cv_trace: Vec<CvRecord> = outcomes.into_iter().flat_map(|o| o.records).collect();

    let mut by_k: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for rec in &cv_trace {
        by_k.entry(rec.k).or_default().push(rec.loss);
    }
    let n_rows = data.n_rows();
    let criterion: Vec<CriterionValue> = by_k
        .iter()
        .filter(|(_, losses)| losses.len() == plan.p)
        .map(|(&k, losses)| {
            let cv_loss = losses.iter().sum::<f64>() / plan.p as f64;
            CriterionValue {
                k,
                cv_loss,
                criterion: cv_loss + bic_penalty(k, n_rows),
            }
        })
        .collect();
    let depth = by_k.keys().copied().max().unwrap_or(0);
    let skipped_k: Vec<usize> = (0..=depth)
        .filter(|k| by_k.get(k).is_none_or(|l| l.len() < plan.p))
        .collect();

    let alpha = config.alpha_for(data);
    let Some(k_hat) = argmin_criterion(&criterion) else {
        let lmax = lambda_max(data);
        let final_fit = fit_l1_logistic(data, lmax, &config.solver)?;
        return Ok(SelectionResult {
            k_hat: 0,
            criterion,
            cv_trace,
            final_r: None,
            final_fit,
            skipped_k,
            degraded: true,
            all_dimensions_skipped: true,
            solver_calls: solver_calls + 1,
        });
    };

    let sketch = gbm(data, alpha, &config.solver, config.k_max_for(data).max(k_hat))?;
    solver_calls += sketch.solver_calls;
    let (final_r, final_fit, calls) = locate_dimension(data, &sketch, k_hat, alpha, &config.solver)?;
    solver_calls += calls;
    Ok(SelectionResult {
        k_hat,
        degraded: final_fit.active_count() != k_hat,
        criterion,
        cv_trace,
        final_r: Some(final_r),
        final_fit,
        skipped_k,
        all_dimensions_skipped: false,
        solver_calls,
    })
}

/// Bisection for a penalty with exactly `k` nonzeros, bracketed by the sketch
/// entries flanking `k`. Returns the penalty, its fit, and the solver calls
/// spent.
pub fn locate_dimension(
    data: &Dataset,
    sketch: &PathSketch,
    k: usize,
    alpha: f64,
    config: &SolverConfig,
) -> Result<(f64, ModelFit, usize)> {
    let (_, below) = sketch
        .entries
        .range(..=k)
        .next_back()
        .ok_or_else(|| Error::Empty("sketch has no entry at or below k".into()))?;
    if below.fit.active_count() == k {
        return Ok((below.r, below.fit.clone(), 0));
    }
    let z0 = below.r;
    let z1 = sketch
        .entries
        .range(k + 1..)
        .next()
        .map_or(sketch.lambda_floor, |(_, e)| e.r);
    let floor_count = nominal_floor_count(data);
    let mut evaluated: Vec<(f64, ModelFit)> = vec![(z0, below.fit.clone())];
    if let Some((_, above)) = sketch.entries.range(k + 1..).next() {
        evaluated.push((z1, above.fit.clone()));
    }
    let mut calls = 0usize;
    let mut failure = None;
    let out = bbm(
        |z| {
            if let Some((_, fit)) = evaluated.iter().find(|(r, _)| *r == z) {
                return fit.active_count() as f64 - k as f64;
            }
            if z == sketch.lambda_floor {
                return floor_count as f64 - k as f64;
            }
            // warm start from the closest evaluated penalty
            let start = evaluated
                .iter()
                .min_by(|a, b| (a.0 - z).abs().total_cmp(&(b.0 - z).abs()))
                .map(|(_, f)| f.params());
            calls += 1;
            match fit_l1_logistic(data, z, &config.with_warm_start(start)) {
                Ok(fit) => {
                    let h = fit.active_count() as f64 - k as f64;
                    evaluated.push((z, fit));
                    h
                }
                Err(e) => {
                    failure = Some(e);
                    f64::NAN
                }
            }
        },
        z0,
        z1,
        alpha,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let out = out?;
    let fit = match evaluated.iter().find(|(r, _)| *r == out.z) {
        Some((_, fit)) => fit.clone(),
        None => {
            calls += 1;
            fit_l1_logistic(data, out.z, config)?
        }
    };
    Ok((out.z, fit, calls))
}
