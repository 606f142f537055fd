//! Data containers and the penalized prospective objective.
//!
//! A [`Dataset`] holds `2n` observations over `M` variables, controls in rows
//! `0..n` and cases in rows `n..2n`. Columns are centered and scaled so that
//! `(1/2n) * sum_i x_ij^2 = 1`; the raw values are kept alongside so that fits
//! can be reported and evaluated on the original scale.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities inside gradients are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-12;

/// Largest exponent magnitude accepted by [`odds_ratio`] before clamping.
pub const ODDS_EXPONENT_LIMIT: f64 = 700.0;

/// `log(1 + e^t)` without overflow.
#[inline]
pub fn log1pexp(t: f64) -> f64 {
    if t > 30.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[inline]
pub fn expit(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Intercept plus coefficient vector, on the standardized scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl Params {
    pub fn zeros(m: usize) -> Self {
        Self {
            intercept: 0.0,
            coefficients: vec![0.0; m],
        }
    }

    pub fn new(intercept: f64, coefficients: Vec<f64>) -> Self {
        Self {
            intercept,
            coefficients,
        }
    }

    pub fn l1_norm(&self) -> f64 {
        self.coefficients.iter().map(|b| b.abs()).sum()
    }

    fn check(&self, m: usize) -> Result<()> {
        if self.coefficients.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: self.coefficients.len(),
            });
        }
        if !self.intercept.is_finite() || self.coefficients.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("parameters".into()));
        }
        Ok(())
    }
}

/// Balanced case-control sample with standardized columns.
#[derive(Debug, Clone)]
pub struct Dataset {
    n: usize,
    m: usize,
    /// Standardized features, column-major, `2n` rows per column.
    features: Vec<f64>,
    /// Raw features, column-major.
    raw: Vec<f64>,
    column_center: Vec<f64>,
    column_scale: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from raw rows and case labels (`true` = case).
    ///
    /// Rows are reordered stably so that controls come first.
    pub fn from_labeled_rows(rows: &[Vec<f64>], labels: &[bool]) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                found: labels.len(),
            });
        }
        let m = rows.first().map(Vec::len).ok_or_else(|| Error::Empty("dataset".into()))?;
        let cases = labels.iter().filter(|&&y| y).count();
        let controls = labels.len() - cases;
        if cases != controls || cases == 0 {
            return Err(Error::Unbalanced { cases, controls });
        }
        let order: Vec<usize> = (0..rows.len())
            .filter(|&i| !labels[i])
            .chain((0..rows.len()).filter(|&i| labels[i]))
            .collect();
        let n_rows = rows.len();
        let mut raw = vec![0.0; n_rows * m];
        for (dst, &src) in order.iter().enumerate() {
            let row = &rows[src];
            if row.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    found: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                raw[j * n_rows + dst] = v;
            }
        }
        Self::from_raw_columns(raw, cases, m)
    }

    /// Builds a dataset from controls and cases given as separate row sets.
    pub fn from_pools(controls: &[Vec<f64>], cases: &[Vec<f64>]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = controls.iter().chain(cases).cloned().collect();
        let labels: Vec<bool> = std::iter::repeat_n(false, controls.len())
            .chain(std::iter::repeat_n(true, cases.len()))
            .collect();
        Self::from_labeled_rows(&rows, &labels)
    }

    /// `raw` is column-major with controls in rows `0..n`, cases in `n..2n`.
    fn from_raw_columns(raw: Vec<f64>, n: usize, m: usize) -> Result<Self> {
        let n_rows = 2 * n;
        if let Some(pos) = raw.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature x[{}][{}]",
                pos % n_rows,
                pos / n_rows
            )));
        }
        let mut features = raw.clone();
        let mut column_center = Vec::with_capacity(m);
        let mut column_scale = Vec::with_capacity(m);
        for j in 0..m {
            let col = &mut features[j * n_rows..(j + 1) * n_rows];
            let mean = col.iter().sum::<f64>() / n_rows as f64;
            col.iter_mut().for_each(|v| *v -= mean);
            let second = col.iter().map(|v| v * v).sum::<f64>() / n_rows as f64;
            let scale = second.sqrt();
            let magnitude = mean.abs().max(scale);
            if scale == 0.0 || scale <= 1e-12 * magnitude {
                return Err(Error::DegenerateData { column: j });
            }
            col.iter_mut().for_each(|v| *v /= scale);
            column_center.push(mean);
            column_scale.push(scale);
        }
        Ok(Self {
            n,
            m,
            features,
            raw,
            column_center,
            column_scale,
        })
    }

    /// Rejects the dataset if any raw value exceeds `bound` in magnitude.
    pub fn with_bound(self, bound: f64) -> Result<Self> {
        let n_rows = self.n_rows();
        if let Some(pos) = self.raw.iter().position(|v| v.abs() > bound) {
            return Err(Error::BoundExceeded {
                row: pos % n_rows,
                column: pos / n_rows,
                value: self.raw[pos],
                bound,
            });
        }
        Ok(self)
    }

    /// Observations per class.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_rows(&self) -> usize {
        2 * self.n
    }

    /// Number of candidate variables.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn is_case(&self, row: usize) -> bool {
        row >= self.n
    }

    pub fn labels(&self) -> Vec<bool> {
        (0..self.n_rows()).map(|i| self.is_case(i)).collect()
    }

    /// Standardized column `j`.
    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        let n_rows = self.n_rows();
        &self.features[j * n_rows..(j + 1) * n_rows]
    }

    #[inline]
    pub fn raw_col(&self, j: usize) -> &[f64] {
        let n_rows = self.n_rows();
        &self.raw[j * n_rows..(j + 1) * n_rows]
    }

    pub fn raw_row(&self, i: usize) -> Vec<f64> {
        (0..self.m).map(|j| self.raw[j * self.n_rows() + i]).collect()
    }

    pub fn column_center(&self) -> &[f64] {
        &self.column_center
    }

    pub fn column_scale(&self) -> &[f64] {
        &self.column_scale
    }

    /// Max-abs raw feature value.
    pub fn max_abs_raw(&self) -> f64 {
        self.raw.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// `delta + X beta` on the standardized scale.
    pub fn linear_predictor(&self, params: &Params) -> Vec<f64> {
        let mut eta = vec![params.intercept; self.n_rows()];
        for (j, &b) in params.coefficients.iter().enumerate() {
            if b != 0.0 {
                eta.iter_mut().zip(self.col(j)).for_each(|(e, x)| *e += b * x);
            }
        }
        eta
    }

    /// `delta_raw + X_raw beta_raw` on the original scale.
    pub fn raw_linear_predictor(&self, intercept_raw: f64, coefficients_raw: &[f64]) -> Vec<f64> {
        let mut eta = vec![intercept_raw; self.n_rows()];
        for (j, &b) in coefficients_raw.iter().enumerate() {
            if b != 0.0 {
                eta.iter_mut().zip(self.raw_col(j)).for_each(|(e, x)| *e += b * x);
            }
        }
        eta
    }

    /// Maps standardized parameters to the raw scale.
    pub fn to_raw(&self, params: &Params) -> (f64, Vec<f64>) {
        let coefficients_raw: Vec<f64> = params
            .coefficients
            .iter()
            .zip(&self.column_scale)
            .map(|(b, s)| b / s)
            .collect();
        let shift: f64 = coefficients_raw
            .iter()
            .zip(&self.column_center)
            .map(|(b, c)| b * c)
            .sum();
        (params.intercept - shift, coefficients_raw)
    }

    /// Re-standardized sub-sample over the given rows (indices into this dataset).
    ///
    /// Only raw values of the selected rows are read, so the result carries no
    /// information about the excluded rows.
    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        let labels: Vec<bool> = rows.iter().map(|&i| self.is_case(i)).collect();
        let raw_rows: Vec<Vec<f64>> = rows.iter().map(|&i| self.raw_row(i)).collect();
        Dataset::from_labeled_rows(&raw_rows, &labels)
    }

    /// Raw-scale view of the given rows.
    pub fn slice(&self, rows: &[usize]) -> DataSlice {
        let n_rows = rows.len();
        let mut raw = vec![0.0; n_rows * self.m];
        for j in 0..self.m {
            let src = self.raw_col(j);
            for (dst, &i) in rows.iter().enumerate() {
                raw[j * n_rows + dst] = src[i];
            }
        }
        DataSlice {
            m: self.m,
            raw,
            labels: rows.iter().map(|&i| self.is_case(i)).collect(),
        }
    }

    /// Dataset restricted to the given columns, in the given order.
    pub fn restrict_columns(&self, columns: &[usize]) -> Result<Dataset> {
        let n_rows = self.n_rows();
        let mut raw = Vec::with_capacity(n_rows * columns.len());
        for &j in columns {
            if j >= self.m {
                return Err(Error::DimensionMismatch {
                    expected: self.m,
                    found: j + 1,
                });
            }
            raw.extend_from_slice(self.raw_col(j));
        }
        Dataset::from_raw_columns(raw, self.n, columns.len())
    }

    /// Reads the `label,x1..xM` CSV format.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.get(0).map(str::trim) != Some("label") {
            return Err(Error::InvalidArgument(
                "first CSV column must be `label`".into(),
            ));
        }
        let m = headers.len() - 1;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != m + 1 {
                return Err(Error::DimensionMismatch {
                    expected: m + 1,
                    found: record.len(),
                });
            }
            let label = match record[0].trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "row {}: label must be 0 or 1, got `{other}`",
                        line + 1
                    )))
                }
            };
            let row = record
                .iter()
                .skip(1)
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|_| {
                        Error::InvalidArgument(format!("row {}: bad number `{s}`", line + 1))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            labels.push(label);
            rows.push(row);
        }
        Self::from_labeled_rows(&rows, &labels)
    }

    /// Writes raw values in the `label,x1..xM` CSV format.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["label".to_string()];
        header.extend((1..=self.m).map(|j| format!("x{j}")));
        wtr.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut record = vec![if self.is_case(i) { "1" } else { "0" }.to_string()];
            record.extend(self.raw_row(i).iter().map(|v| v.to_string()));
            wtr.write_record(&record)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Raw-scale rows with labels, used for held-out evaluation.
#[derive(Debug, Clone)]
pub struct DataSlice {
    m: usize,
    raw: Vec<f64>,
    labels: Vec<bool>,
}

impl DataSlice {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn raw_col(&self, j: usize) -> &[f64] {
        let n_rows = self.n_rows();
        &self.raw[j * n_rows..(j + 1) * n_rows]
    }

    pub fn raw_linear_predictor(&self, intercept_raw: f64, coefficients_raw: &[f64]) -> Vec<f64> {
        let mut eta = vec![intercept_raw; self.n_rows()];
        for (j, &b) in coefficients_raw.iter().enumerate() {
            if b != 0.0 {
                eta.iter_mut().zip(self.raw_col(j)).for_each(|(e, x)| *e += b * x);
            }
        }
        eta
    }
}

/// A penalized fit together with its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub intercept: f64,
    /// Standardized-scale coefficients.
    pub coefficients: Vec<f64>,
    pub intercept_raw: f64,
    pub coefficients_raw: Vec<f64>,
    /// Sorted indices of the nonzero coefficients.
    pub active_set: Vec<usize>,
    /// Multiplier of the l1 norm.
    pub lambda: f64,
    pub objective_value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub kkt_violation: f64,
    /// Set when a requested `lambda = 0` was replaced by the solver floor.
    pub floor_substituted: bool,
}

impl ModelFit {
    /// Assembles a fit from parameters, filling in the derived fields.
    pub fn assemble(
        data: &Dataset,
        params: Params,
        lambda: f64,
        converged: bool,
        iterations: usize,
        kkt_violation: f64,
    ) -> Result<Self> {
        let objective_value = prospective_objective(&params, data, lambda)?;
        let (intercept_raw, coefficients_raw) = data.to_raw(&params);
        let active_set = params
            .coefficients
            .iter()
            .enumerate()
            .filter(|(_, b)| b.abs() > 0.0)
            .map(|(j, _)| j)
            .collect();
        Ok(Self {
            intercept: params.intercept,
            coefficients: params.coefficients,
            intercept_raw,
            coefficients_raw,
            active_set,
            lambda,
            objective_value,
            converged,
            iterations,
            kkt_violation,
            floor_substituted: false,
        })
    }

    pub fn params(&self) -> Params {
        Params::new(self.intercept, self.coefficients.clone())
    }

    /// Number of nonzero coefficients.
    pub fn active_count(&self) -> usize {
        self.active_set.len()
    }
}

/// Penalized, `2n`-scaled negative prospective log-likelihood.
pub fn prospective_objective(params: &Params, data: &Dataset, lambda: f64) -> Result<f64> {
    params.check(data.m())?;
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::NonFinite("lambda".into()));
    }
    let eta = data.linear_predictor(params);
    Ok(negative_log_likelihood(&eta, data.n()) + lambda * params.l1_norm())
}

/// Scaled negative log-likelihood from a precomputed linear predictor
/// (controls first, then cases).
pub(crate) fn negative_log_likelihood(eta: &[f64], n: usize) -> f64 {
    let (controls, cases) = eta.split_at(n);
    let total: f64 = controls.iter().map(|&t| log1pexp(t)).sum::<f64>()
        + cases.iter().map(|&t| log1pexp(-t)).sum::<f64>();
    total / eta.len() as f64
}

/// Gradient of the unpenalized scaled negative log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl Gradient {
    pub fn max_abs(&self) -> f64 {
        self.coefficients
            .iter()
            .fold(self.intercept.abs(), |acc, g| acc.max(g.abs()))
    }
}

pub fn prospective_gradient(params: &Params, data: &Dataset) -> Result<Gradient> {
    params.check(data.m())?;
    let eta = data.linear_predictor(params);
    Ok(gradient_from_eta(&eta, data))
}

pub(crate) fn gradient_from_eta(eta: &[f64], data: &Dataset) -> Gradient {
    let n_rows = data.n_rows() as f64;
    let n = data.n();
    // residual p - y
    let resid: Vec<f64> = eta
        .iter()
        .enumerate()
        .map(|(i, &t)| clamp_prob(expit(t)) - if i >= n { 1.0 } else { 0.0 })
        .collect();
    let intercept = resid.iter().sum::<f64>() / n_rows;
    let coefficients = (0..data.m())
        .map(|j| {
            data.col(j)
                .iter()
                .zip(&resid)
                .map(|(x, r)| x * r)
                .sum::<f64>()
                / n_rows
        })
        .collect();
    Gradient {
        intercept,
        coefficients,
    }
}

/// `p1(x_i)` for every row of `data`.
pub fn fitted_probabilities(fit: &ModelFit, data: &Dataset) -> Result<Vec<f64>> {
    let params = fit.params();
    params.check(data.m())?;
    Ok(data.linear_predictor(&params).into_iter().map(expit).collect())
}

/// `|mean_i p1(x_i) - 1/2|`: the empirical residual of the retrospective
/// normalization constraint.
pub fn check_retrospective_constraint(fit: &ModelFit, data: &Dataset) -> Result<f64> {
    let probs = fitted_probabilities(fit, data)?;
    let mean = probs.iter().sum::<f64>() / probs.len() as f64;
    Ok((mean - 0.5).abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OddsRatio {
    pub value: f64,
    /// The exponent was clamped to `+-ODDS_EXPONENT_LIMIT`.
    pub clamped: bool,
}

/// `exp(beta_raw' (x - x0))` for raw-scale covariate profiles.
pub fn odds_ratio(fit: &ModelFit, x: &[f64], x0: &[f64]) -> Result<OddsRatio> {
    let m = fit.coefficients_raw.len();
    for v in [x, x0] {
        if v.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: v.len(),
            });
        }
    }
    let exponent: f64 = fit
        .coefficients_raw
        .iter()
        .zip(x.iter().zip(x0))
        .map(|(b, (a, a0))| b * (a - a0))
        .sum();
    if !exponent.is_finite() {
        return Err(Error::NonFinite("odds-ratio exponent".into()));
    }
    let clamped = exponent.abs() > ODDS_EXPONENT_LIMIT;
    let exponent = exponent.clamp(-ODDS_EXPONENT_LIMIT, ODDS_EXPONENT_LIMIT);
    Ok(OddsRatio {
        value: exponent.exp(),
        clamped,
    })
}
