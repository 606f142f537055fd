//! Sparsity-indexed regularization path sketches.
//!
//! [`bbm`] is plain bisection for a sign change. [`gbm`] runs bisection for
//! every support size at once: a FIFO queue of penalty intervals is split at
//! midpoints, the first penalty seen for each support size is kept, and an
//! interval is split further only while its endpoints' support sizes differ
//! from the midpoint's by more than one. [`grid_path`] is the geometric grid
//! baseline with a fixed number of solver calls.

use std::collections::{BTreeMap, VecDeque};
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, ModelFit};
use crate::simulate::GroundTruth;
use crate::solver::{fit_l1_logistic, lambda_max, SolverConfig};

/// Outcome of a bisection run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bisection {
    pub z: f64,
    /// `h(z) == 0` was observed; otherwise `z` is the midpoint of a bracket
    /// narrower than the accuracy.
    pub root: bool,
    pub evaluations: usize,
}

/// Bisection for a sign change of `h` on `[z0, z1]`.
///
/// Stops at the first evaluated point with `h = 0`, or returns the midpoint
/// once the bracket is narrower than `alpha`.
pub fn bbm<F: FnMut(f64) -> f64>(mut h: F, z0: f64, z1: f64, alpha: f64) -> Result<Bisection> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument("bisection accuracy must be > 0".into()));
    }
    let (mut z0, mut z1) = (z0, z1);
    let mut h0 = h(z0);
    let h1 = h(z1);
    if h0 * h1 > 0.0 || h0.is_nan() || h1.is_nan() {
        return Err(Error::BracketInvalid { h0, h1 });
    }
    let mut evaluations = 2;
    if h0 == 0.0 {
        return Ok(Bisection {
            z: z0,
            root: true,
            evaluations,
        });
    }
    if h1 == 0.0 {
        return Ok(Bisection {
            z: z1,
            root: true,
            evaluations,
        });
    }
    loop {
        let z = 0.5 * (z0 + z1);
        if (z1 - z0).abs() < alpha {
            return Ok(Bisection {
                z,
                root: false,
                evaluations,
            });
        }
        let hz = h(z);
        evaluations += 1;
        if hz == 0.0 {
            return Ok(Bisection {
                z,
                root: true,
                evaluations,
            });
        }
        if hz * h0 < 0.0 {
            z1 = z;
        } else {
            z0 = z;
            h0 = hz;
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SketchEntry {
    /// Penalty at which the fit has exactly `k` nonzeros.
    pub r: f64,
    pub fit: ModelFit,
    /// Solver calls spent when this entry was recorded.
    pub solver_calls: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathSketch {
    pub entries: BTreeMap<usize, SketchEntry>,
    /// Interval-width stopping threshold.
    pub accuracy: f64,
    pub solver_calls: usize,
    /// Support sizes in `0..=k_max` without an entry.
    pub missing: Vec<usize>,
    pub k_max: usize,
    pub lambda_max: f64,
    pub lambda_floor: f64,
    /// Number of intervals popped from the queue.
    pub queue_iterations: usize,
}

impl PathSketch {
    pub fn get(&self, k: usize) -> Option<&SketchEntry> {
        self.entries.get(&k)
    }
}

#[derive(Clone)]
struct Endpoint {
    r: f64,
    k: usize,
    fit: Option<Rc<ModelFit>>,
}

/// Support size assumed at the right endpoint `lambda_floor` without fitting
/// there: every variable, capped by the number of observations.
pub fn nominal_floor_count(data: &Dataset) -> usize {
    data.m().min(data.n_rows() - 1)
}

/// Default sketch depth: all support sizes reachable with `2n` observations.
pub fn default_k_max(data: &Dataset) -> usize {
    nominal_floor_count(data)
}

/// Generalized bisection over the penalty for all support sizes up to `k_max`.
///
/// The floor endpoint carries its nominal size during the search and is fitted
/// once at the end only if that size is wanted and still unrecorded.
pub fn gbm(data: &Dataset, alpha: f64, config: &SolverConfig, k_max: usize) -> Result<PathSketch> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument("alpha must be > 0".into()));
    }
    let k_max = k_max.min(data.m());
    let lmax = lambda_max(data);
    let floor = config.lambda_floor;
    let mut solver_calls = 0usize;
    let mut entries = BTreeMap::new();

    let cold = config.with_warm_start(None);
    let top = Rc::new(fit_l1_logistic(data, lmax, &cold)?);
    solver_calls += 1;
    if top.converged && top.active_count() <= k_max {
        entries.insert(
            top.active_count(),
            SketchEntry {
                r: lmax,
                fit: (*top).clone(),
                solver_calls,
            },
        );
    }
    let left = Endpoint {
        r: lmax,
        k: top.active_count(),
        fit: Some(top),
    };
    let right = Endpoint {
        r: floor,
        k: nominal_floor_count(data),
        fit: None,
    };

    // intervals whose both ends already reach k_max hold nothing of interest
    let worth = |ka: usize, kb: usize| ka.abs_diff(kb) > 1 && ka.min(kb) < k_max;

    let mut queue = VecDeque::new();
    if worth(left.k, right.k) {
        queue.push_back((left, right));
    }
    let mut queue_iterations = 0usize;
    while let Some((a, b)) = queue.pop_front() {
        queue_iterations += 1;
        let r = 0.5 * (a.r + b.r);
        let start = a.fit.as_ref().or(b.fit.as_ref()).map(|f| f.params());
        let fit = fit_l1_logistic(data, r, &config.with_warm_start(start))?;
        solver_calls += 1;
        let k = fit.active_count();
        if fit.converged && k <= k_max && !entries.contains_key(&k) {
            entries.insert(
                k,
                SketchEntry {
                    r,
                    fit: fit.clone(),
                    solver_calls,
                },
            );
        }
        let mid = Endpoint {
            r,
            k,
            fit: Some(Rc::new(fit)),
        };
        if a.k.abs_diff(k) > 1 && (a.r - r).abs() > alpha && worth(a.k, k) {
            queue.push_back((a, mid.clone()));
        }
        if b.k.abs_diff(k) > 1 && (b.r - r).abs() > alpha && worth(k, b.k) {
            queue.push_back((mid, b));
        }
    }

    // the floor is only assumed during the search, so a size one step from
    // it is never split off; close that gap with a real fit
    let floor_k = nominal_floor_count(data);
    if floor_k <= k_max && !entries.contains_key(&floor_k) {
        let start = entries.values().next_back().map(|e| e.fit.params());
        let fit = fit_l1_logistic(data, floor, &config.with_warm_start(start))?;
        solver_calls += 1;
        let k = fit.active_count();
        if fit.converged && k <= k_max && !entries.contains_key(&k) {
            entries.insert(
                k,
                SketchEntry {
                    r: floor,
                    fit,
                    solver_calls,
                },
            );
        }
    }

    let missing = (0..=k_max).filter(|k| !entries.contains_key(k)).collect();
    Ok(PathSketch {
        entries,
        accuracy: alpha,
        solver_calls,
        missing,
        k_max,
        lambda_max: lmax,
        lambda_floor: floor,
        queue_iterations,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridPath {
    /// Strictly decreasing penalties.
    pub grid: Vec<f64>,
    pub fits: Vec<ModelFit>,
    pub solver_calls: usize,
}

/// Geometric grid from `lambda_max` down to `lambda_floor` with `budget`
/// points, each fit warm-started from the previous one.
pub fn grid_path(data: &Dataset, budget: usize, config: &SolverConfig) -> Result<GridPath> {
    if budget < 2 {
        return Err(Error::InvalidArgument("grid budget must be >= 2".into()));
    }
    let lmax = lambda_max(data);
    let floor = config.lambda_floor;
    if !(lmax > floor) {
        return Err(Error::InvalidArgument(format!(
            "lambda_max {lmax} does not exceed lambda_floor {floor}"
        )));
    }
    let ratio = (floor / lmax).ln();
    let last = (budget - 1) as f64;
    let grid: Vec<f64> = (0..budget)
        .map(|i| match i {
            0 => lmax,
            i if i == budget - 1 => floor,
            i => lmax * (ratio * i as f64 / last).exp(),
        })
        .collect();
    let mut fits: Vec<ModelFit> = Vec::with_capacity(budget);
    for &lambda in &grid {
        let start = fits.last().map(ModelFit::params);
        fits.push(fit_l1_logistic(data, lambda, &config.with_warm_start(start))?);
    }
    Ok(GridPath {
        grid,
        solver_calls: fits.len(),
        fits,
    })
}

/// Anything that exposes a collection of fits along a path.
pub trait PathFits {
    fn path_fits(&self) -> Vec<&ModelFit>;
}

impl PathFits for PathSketch {
    fn path_fits(&self) -> Vec<&ModelFit> {
        self.entries.values().map(|e| &e.fit).collect()
    }
}

impl PathFits for GridPath {
    fn path_fits(&self) -> Vec<&ModelFit> {
        self.fits.iter().collect()
    }
}

/// Whether some fit along the path selects exactly the true support.
pub fn support_in_path<P: PathFits + ?Sized>(path: &P, truth: &GroundTruth) -> bool {
    path.path_fits()
        .iter()
        .any(|fit| fit.active_set == truth.support)
}
