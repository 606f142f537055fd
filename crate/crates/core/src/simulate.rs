//! Case-control data generation and the theoretical tuning sequences.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{expit, Dataset};
use crate::path::bbm;

/// Deterministic RNG stream `stream` under `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalKind {
    Snp,
    NorIid,
    NorCorr,
}

impl fmt::Display for MarginalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Snp => "snp",
            Self::NorIid => "nor_iid",
            Self::NorCorr => "nor_corr",
        })
    }
}

impl FromStr for MarginalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "snp" => Ok(Self::Snp),
            "nor_iid" => Ok(Self::NorIid),
            "nor_corr" => Ok(Self::NorCorr),
            other => Err(Error::InvalidArgument(format!("unknown marginal `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalSpec {
    pub kind: MarginalKind,
    pub m: usize,
    /// Variance of NOR_IID entries.
    pub sigma2: f64,
    /// AR(1) correlation of NOR_CORR, `cov(X_i, X_j) = rho^|i-j|`.
    pub rho: f64,
}

impl MarginalSpec {
    pub fn new(kind: MarginalKind, m: usize) -> Self {
        Self {
            kind,
            m,
            sigma2: 1.0,
            rho: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidArgument("M must be positive".into()));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::InvalidArgument("sigma2 must be positive".into()));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::InvalidArgument("rho must lie in (-1, 1)".into()));
        }
        Ok(())
    }

    /// Draws columns `from..to` of a row, given columns `..from` already drawn.
    fn fill<R: Rng>(&self, rng: &mut R, row: &mut [f64], from: usize, to: usize) {
        match self.kind {
            MarginalKind::Snp => {
                for v in &mut row[from..to] {
                    *v = match rng.gen_range(0..4u8) {
                        0 => -std::f64::consts::SQRT_2,
                        3 => std::f64::consts::SQRT_2,
                        _ => 0.0,
                    };
                }
            }
            MarginalKind::NorIid => {
                let sd = self.sigma2.sqrt();
                for v in &mut row[from..to] {
                    *v = sd * rng.sample::<f64, _>(StandardNormal);
                }
            }
            MarginalKind::NorCorr => {
                // rows of the Cholesky factor of the AR(1) matrix:
                // L[0][0] = 1, L[j][.] = rho * L[j-1][.] + sqrt(1 - rho^2) e_j
                let innovation = (1.0 - self.rho * self.rho).sqrt();
                for j in from..to {
                    let z: f64 = rng.sample(StandardNormal);
                    row[j] = if j == 0 {
                        z
                    } else {
                        self.rho * row[j - 1] + innovation * z
                    };
                }
            }
        }
    }

    /// Number of leading columns that must be drawn before the linear
    /// predictor `beta' x` is known, when the support sits at `support`.
    fn decisive_prefix(&self, support: &[usize]) -> usize {
        support.iter().max().map_or(0, |&j| j + 1)
    }
}

/// `count` i.i.d. rows from the marginal.
pub fn sample_marginal(spec: &MarginalSpec, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let mut rng = rng_stream(seed, 0);
    Ok((0..count)
        .map(|_| {
            let mut row = vec![0.0; spec.m];
            spec.fill(&mut rng, &mut row, 0, spec.m);
            row
        })
        .collect())
}

/// Simulation truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub beta_star: Vec<f64>,
    pub support: Vec<usize>,
    pub support_size: usize,
    pub prevalence: f64,
    pub intercept0: f64,
    pub marginal: MarginalSpec,
}

impl GroundTruth {
    pub fn new(marginal: MarginalSpec, beta_star: Vec<f64>, prevalence: f64, intercept0: f64) -> Result<Self> {
        if beta_star.len() != marginal.m {
            return Err(Error::DimensionMismatch {
                expected: marginal.m,
                found: beta_star.len(),
            });
        }
        if !(prevalence > 0.0 && prevalence < 1.0) {
            return Err(Error::InvalidArgument("prevalence must lie in (0, 1)".into()));
        }
        let support: Vec<usize> = beta_star
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0.0)
            .map(|(j, _)| j)
            .collect();
        Ok(Self {
            support_size: support.len(),
            support,
            beta_star,
            prevalence,
            intercept0,
            marginal,
        })
    }

    fn linear_predictor(&self, row: &[f64]) -> f64 {
        self.support.iter().map(|&j| self.beta_star[j] * row[j]).sum()
    }
}

/// `k_star` indices spread evenly over `0..m`.
pub fn spread_support(m: usize, k_star: usize) -> Vec<usize> {
    let k = k_star.min(m);
    (0..k).map(|i| i * m / k).collect()
}

/// `beta_star` with `beta_value` on [`spread_support`] and zero elsewhere.
pub fn sparse_beta(m: usize, k_star: usize, beta_value: f64) -> Vec<f64> {
    let mut beta = vec![0.0; m];
    for j in spread_support(m, k_star) {
        beta[j] = beta_value;
    }
    beta
}

/// Intercept `delta0` with `E[expit(delta0 + beta' X)] = pi` under the
/// marginal, estimated on a fixed sample of `mc` draws.
pub fn calibrate_delta0(spec: &MarginalSpec, beta_star: &[f64], pi: f64, mc: usize, seed: u64) -> Result<f64> {
    spec.validate()?;
    if beta_star.len() != spec.m {
        return Err(Error::DimensionMismatch {
            expected: spec.m,
            found: beta_star.len(),
        });
    }
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::InvalidArgument("prevalence must lie in (0, 1)".into()));
    }
    if mc == 0 {
        return Err(Error::InvalidArgument("Monte Carlo size must be positive".into()));
    }
    let logit = (pi / (1.0 - pi)).ln();
    let support: Vec<usize> = (0..spec.m).filter(|&j| beta_star[j] != 0.0).collect();
    if support.is_empty() {
        return Ok(logit);
    }
    let prefix = spec.decisive_prefix(&support);
    let mut rng = rng_stream(seed, 1);
    let mut row = vec![0.0; prefix];
    let scores: Vec<f64> = (0..mc)
        .map(|_| {
            spec.fill(&mut rng, &mut row, 0, prefix);
            support.iter().map(|&j| beta_star[j] * row[j]).sum()
        })
        .collect();
    let prevalence_at = |delta: f64| scores.iter().map(|s| expit(delta + s)).sum::<f64>() / mc as f64;
    let out = bbm(|delta| prevalence_at(delta) - pi, -50.0, 50.0, 1e-10)?;
    Ok(out.z)
}

/// Ground truth with `k_star` coefficients equal to `beta_value` and a
/// calibrated intercept.
pub fn make_truth(
    spec: &MarginalSpec,
    k_star: usize,
    beta_value: f64,
    pi: f64,
    mc: usize,
    seed: u64,
) -> Result<GroundTruth> {
    let beta = sparse_beta(spec.m, k_star, beta_value);
    let delta0 = calibrate_delta0(spec, &beta, pi, mc, seed)?;
    GroundTruth::new(*spec, beta, pi, delta0)
}

/// Monte Carlo prevalence `mean expit(delta0 + beta' X)` over `draws` fresh
/// marginal draws, independent of the calibration sample.
pub fn estimate_prevalence(truth: &GroundTruth, draws: usize, seed: u64) -> Result<f64> {
    let spec = &truth.marginal;
    spec.validate()?;
    let prefix = spec.decisive_prefix(&truth.support);
    let mut rng = rng_stream(seed, 2);
    let mut row = vec![0.0; prefix];
    let mut total = 0.0;
    for _ in 0..draws {
        spec.fill(&mut rng, &mut row, 0, prefix);
        total += expit(truth.intercept0 + truth.linear_predictor(&row));
    }
    Ok(total / draws as f64)
}

/// Balanced case-control sample of `n` cases and `n` controls.
///
/// Draws `x` from the marginal and `y ~ Bernoulli(expit(delta0 + beta' x))`,
/// routing `x` to the case or control pool until both hold `n` rows.
pub fn sample_case_control(truth: &GroundTruth, n: usize, seed: u64) -> Result<Dataset> {
    let spec = &truth.marginal;
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    let budget = (1000.0 * n as f64 / truth.prevalence.min(1.0 - truth.prevalence)).ceil() as u64;
    let prefix = spec.decisive_prefix(&truth.support);
    let mut rng = rng_stream(seed, 3);
    let mut controls = Vec::with_capacity(n);
    let mut cases = Vec::with_capacity(n);
    let mut draws = 0u64;
    while controls.len() < n || cases.len() < n {
        if draws >= budget {
            return Err(Error::DrawBudgetExceeded { budget });
        }
        draws += 1;
        let mut row = vec![0.0; spec.m];
        spec.fill(&mut rng, &mut row, 0, prefix);
        let p = expit(truth.intercept0 + truth.linear_predictor(&row));
        let is_case = rng.gen::<f64>() < p;
        let pool = if is_case { &mut cases } else { &mut controls };
        if pool.len() < n {
            spec.fill(&mut rng, &mut row, prefix, spec.m);
            pool.push(row);
        }
    }
    Dataset::from_pools(&controls, &cases)
}

/// Inputs of the theoretical tuning sequences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningInputs {
    /// Observations per class (real-valued so the formulas can be probed).
    pub n: f64,
    pub m: f64,
    /// Bound on the feature magnitudes.
    pub bound: f64,
    /// Vanishing confidence sequence, conventionally `1/n`.
    pub delta_n: f64,
}

impl TuningInputs {
    pub fn new(n: f64, m: f64, bound: f64) -> Self {
        Self {
            n,
            m,
            bound,
            delta_n: 1.0 / n,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.n > 0.0 && self.m > 0.0 && self.bound > 0.0) {
            return Err(Error::InvalidArgument("tuning inputs must be positive".into()));
        }
        if !(self.delta_n > 0.0 && self.delta_n < 1.0) {
            return Err(Error::InvalidArgument("delta_n must lie in (0, 1)".into()));
        }
        Ok(())
    }

    fn r_with_confidence_log(&self, confidence_log: f64) -> f64 {
        let big = self.m.max(self.n);
        let l = self.bound;
        self.n.ln()
            * (6.0 * l * (2.0 * (2.0 * big).ln() / self.n).sqrt()
                + 1.0 / (4.0 * big)
                + 4.0 * l * (2.0 * confidence_log / self.n).sqrt())
    }
}

/// Tuning level for odds-ratio estimation.
pub fn theoretical_r_estimation(t: &TuningInputs) -> Result<f64> {
    t.validate()?;
    Ok(t.r_with_confidence_log((1.0 / t.delta_n).ln()))
}

/// Tuning level for support recovery: the last term uses `log(M / delta_n)`.
pub fn theoretical_r_selection(t: &TuningInputs) -> Result<f64> {
    t.validate()?;
    Ok(t.r_with_confidence_log((t.m / t.delta_n).ln()))
}

/// Whether every true coefficient exceeds four times the selection tuning level.
pub fn signal_above_noise(truth: &GroundTruth, t: &TuningInputs) -> Result<bool> {
    let r = theoretical_r_selection(t)?;
    let min_signal = truth
        .support
        .iter()
        .map(|&j| truth.beta_star[j].abs())
        .fold(f64::INFINITY, f64::min);
    Ok(min_signal > 4.0 * r)
}
