//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use sparse_cc::Dataset;

/// Raw rows (controls first) and labels for a seeded Gaussian instance where
/// case rows are shifted by `shift` in every column of `signal`.
pub fn gaussian_rows(seed: u64, n: usize, m: usize, signal: &[(usize, f64)]) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(2 * n);
    for i in 0..2 * n {
        let case = i >= n;
        let mut row: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        if case {
            for &(j, s) in signal {
                row[j] += s;
            }
        }
        rows.push(row);
        labels.push(case);
    }
    (rows, labels)
}

pub fn gaussian_dataset(seed: u64, n: usize, m: usize, signal: &[(usize, f64)]) -> Dataset {
    let (rows, labels) = gaussian_rows(seed, n, m, signal);
    Dataset::from_labeled_rows(&rows, &labels).unwrap()
}

/// Center each column and scale to `(1/N) sum x^2 = 1`.
pub fn standardize(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let m = rows[0].len();
    let mut out = rows.to_vec();
    for j in 0..m {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let ss = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        let s = ss.sqrt();
        for r in out.iter_mut() {
            r[j] = (r[j] - mean) / s;
        }
    }
    out
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Term-by-term penalized objective on already standardized rows.
pub fn objective_oracle(rows: &[Vec<f64>], labels: &[bool], b0: f64, beta: &[f64], lambda: f64) -> f64 {
    let mut total = 0.0;
    for (row, &y) in rows.iter().zip(labels) {
        let eta = b0 + row.iter().zip(beta).map(|(x, b)| x * b).sum::<f64>();
        total += if y { softplus(-eta) } else { softplus(eta) };
    }
    total / rows.len() as f64 + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for c in (0..n).rev() {
        let s: f64 = (c + 1..n).map(|k| a[c][k] * x[k]).sum();
        x[c] = (b[c] - s) / a[c][c];
    }
    x
}

/// Unpenalized logistic MLE by damped Newton with Gaussian elimination.
/// Returns `[intercept, beta...]` on the given design.
pub fn newton_mle(rows: &[Vec<f64>], labels: &[bool]) -> Vec<f64> {
    let d = rows[0].len() + 1;
    let design: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| std::iter::once(1.0).chain(r.iter().copied()).collect())
        .collect();
    let loss = |th: &[f64]| -> f64 {
        design
            .iter()
            .zip(labels)
            .map(|(x, &y)| {
                let eta: f64 = x.iter().zip(th).map(|(a, b)| a * b).sum();
                if y {
                    softplus(-eta)
                } else {
                    softplus(eta)
                }
            })
            .sum()
    };
    let mut theta = vec![0.0; d];
    for _ in 0..200 {
        let mut grad = vec![0.0; d];
        let mut hess = vec![vec![0.0; d]; d];
        for (x, &y) in design.iter().zip(labels) {
            let eta: f64 = x.iter().zip(&theta).map(|(a, b)| a * b).sum();
            let p = 1.0 / (1.0 + (-eta).exp());
            let r = p - if y { 1.0 } else { 0.0 };
            let w = p * (1.0 - p);
            for a in 0..d {
                grad[a] += r * x[a];
                for b in 0..d {
                    hess[a][b] += w * x[a] * x[b];
                }
            }
        }
        if grad.iter().all(|g| g.abs() < 1e-13 * rows.len() as f64) {
            break;
        }
        let step = solve_dense(hess, grad.iter().map(|g| -g).collect());
        let base = loss(&theta);
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            if loss(&trial) <= base || t < 1e-12 {
                theta = trial;
                break;
            }
            t *= 0.5;
        }
    }
    theta
}

/// Minimum of a convex `f` over the lattice `lo + step * i` in `[lo, hi]^3`:
/// a coarse scan picks the start, then discrete descent over the 26
/// lattice neighbours runs until no neighbour improves.
pub fn lattice_min3(f: impl Fn([f64; 3]) -> f64, lo: f64, hi: f64, step: f64) -> f64 {
    let last = ((hi - lo) / step).round() as i64;
    let at = |i: [i64; 3]| f(i.map(|k| lo + step * k as f64));
    let stride = (last / 24).max(1);
    let mut best = [0i64; 3];
    let mut best_v = f64::INFINITY;
    for a in (0..=last).step_by(stride as usize) {
        for b in (0..=last).step_by(stride as usize) {
            for c in (0..=last).step_by(stride as usize) {
                let v = at([a, b, c]);
                if v < best_v {
                    best_v = v;
                    best = [a, b, c];
                }
            }
        }
    }
    loop {
        let mut moved = false;
        for da in -1..=1 {
            for db in -1..=1 {
                for dc in -1..=1 {
                    let cand = [best[0] + da, best[1] + db, best[2] + dc];
                    if cand.iter().any(|&k| k < 0 || k > last) {
                        continue;
                    }
                    let v = at(cand);
                    if v < best_v {
                        best_v = v;
                        best = cand;
                        moved = true;
                    }
                }
            }
        }
        if !moved {
            return best_v;
        }
    }
}
