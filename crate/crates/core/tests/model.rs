mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sparse_cc::model::{
    check_retrospective_constraint, fitted_probabilities, log1pexp, odds_ratio, prospective_gradient,
    prospective_objective,
};
use sparse_cc::solver::lambda_max;
use sparse_cc::{fit_l1_logistic, Dataset, Params, SolverConfig};

fn hand_dataset() -> Dataset {
    // both columns already have mean 0 and (1/4) sum x^2 = 1
    let rows = vec![vec![1.0, 1.0], vec![-1.0, 1.0], vec![1.0, -1.0], vec![-1.0, -1.0]];
    Dataset::from_labeled_rows(&rows, &[false, false, true, true]).unwrap()
}

#[test]
fn hand_objective_matches_term_by_term_sum() {
    let data = hand_dataset();
    let params = Params::new(0.5, vec![1.0, -1.0]);
    // eta = 0.5 + x1 - x2 per row
    let expected = (log1pexp_ref(0.5) + log1pexp_ref(-1.5) + log1pexp_ref(-2.5) + log1pexp_ref(-0.5)) / 4.0 + 0.1 * 2.0;
    let got = prospective_objective(&params, &data, 0.1).unwrap();
    assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
}

fn log1pexp_ref(t: f64) -> f64 {
    (1.0 + t.exp()).ln()
}

#[test]
fn zero_parameters_give_log_two() {
    let data = common::gaussian_dataset(3, 20, 4, &[]);
    let zero = Params::zeros(4);
    for lambda in [0.0, 5.0] {
        let v = prospective_objective(&zero, &data, lambda).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }
    assert_eq!(prospective_gradient(&zero, &data).unwrap().intercept, 0.0);
    let fit = fit_l1_logistic(&data, lambda_max(&data) * 2.0, &SolverConfig::default()).unwrap();
    assert!(fitted_probabilities(&fit, &data).unwrap().iter().all(|&p| p == 0.5));
    assert_eq!(check_retrospective_constraint(&fit, &data).unwrap(), 0.0);
}

#[test]
fn objective_matches_oracle_on_standardized_rows() {
    let (rows, labels) = common::gaussian_rows(11, 15, 3, &[(0, 0.8)]);
    let data = Dataset::from_labeled_rows(&rows, &labels).unwrap();
    let std_rows = common::standardize(&rows);
    let beta = vec![0.3, -0.2, 0.7];
    let got = prospective_objective(&Params::new(-0.4, beta.clone()), &data, 0.05).unwrap();
    let want = common::objective_oracle(&std_rows, &labels, -0.4, &beta, 0.05);
    assert!((got - want).abs() < 1e-13);
}

#[test]
fn gradient_matches_central_differences() {
    let data = common::gaussian_dataset(5, 30, 4, &[(1, 1.0)]);
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let b0: f64 = rng.gen_range(-2.0..2.0);
        let beta: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let p = Params::new(b0, beta.clone());
        let g = prospective_gradient(&p, &data).unwrap();
        let f = |q: &Params| prospective_objective(q, &data, 0.0).unwrap();
        let mut plus = p.clone();
        let mut minus = p.clone();
        plus.intercept += h;
        minus.intercept -= h;
        worst = worst.max(((f(&plus) - f(&minus)) / (2.0 * h) - g.intercept).abs());
        for j in 0..4 {
            let mut plus = p.clone();
            let mut minus = p.clone();
            plus.coefficients[j] += h;
            minus.coefficients[j] -= h;
            worst = worst.max(((f(&plus) - f(&minus)) / (2.0 * h) - g.coefficients[j]).abs());
        }
    }
    assert!(worst <= 1e-6, "max discrepancy {worst}");
}

proptest! {
    #[test]
    fn objective_is_convex(
        a in prop::collection::vec(-3.0f64..3.0, 4),
        b in prop::collection::vec(-3.0f64..3.0, 4),
        t in 0.01f64..0.99,
    ) {
        let data = common::gaussian_dataset(9, 12, 3, &[(0, 1.0)]);
        let pa = Params::new(a[0], a[1..].to_vec());
        let pb = Params::new(b[0], b[1..].to_vec());
        let mix = Params::new(
            t * a[0] + (1.0 - t) * b[0],
            a[1..].iter().zip(&b[1..]).map(|(x, y)| t * x + (1.0 - t) * y).collect(),
        );
        let f = |p: &Params| prospective_objective(p, &data, 0.1).unwrap();
        prop_assert!(f(&mix) <= t * f(&pa) + (1.0 - t) * f(&pb) + 1e-10);
    }

    #[test]
    fn log1pexp_is_stable(t in -800.0f64..800.0) {
        let v = log1pexp(t);
        prop_assert!(v.is_finite() && v >= 0.0);
        prop_assert!(v >= t.max(0.0) && v <= t.max(0.0) + std::f64::consts::LN_2 + 1e-15);
    }
}

#[test]
fn raw_scale_reproduces_standardized_predictor() {
    let (rows, labels) = common::gaussian_rows(21, 40, 5, &[(2, 1.2)]);
    let shifted: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().enumerate().map(|(j, x)| 3.0 * x + j as f64).collect()).collect();
    let data = Dataset::from_labeled_rows(&shifted, &labels).unwrap();
    let fit = fit_l1_logistic(&data, 0.02, &SolverConfig::default()).unwrap();
    let std_eta = data.linear_predictor(&fit.params());
    let raw_eta = data.raw_linear_predictor(fit.intercept_raw, &fit.coefficients_raw);
    for (a, b) in std_eta.iter().zip(&raw_eta) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn constraint_holds_at_optimum_and_discriminates() {
    let data = common::gaussian_dataset(8, 50, 6, &[(0, 1.5), (3, -1.0)]);
    for frac in [0.5, 0.1, 0.01] {
        let fit = fit_l1_logistic(&data, frac * lambda_max(&data), &SolverConfig::default()).unwrap();
        assert!(fit.converged);
        assert!(check_retrospective_constraint(&fit, &data).unwrap() <= 1e-6);
    }
    // one sweep from a displaced intercept leaves the constraint visibly off
    let config = SolverConfig {
        max_iterations: 1,
        warm_start: Some(Params::new(2.0, vec![0.0; 6])),
        ..SolverConfig::default()
    };
    let rough = fit_l1_logistic(&data, 0.01 * lambda_max(&data), &config).unwrap();
    assert!(!rough.converged);
    let gap = check_retrospective_constraint(&rough, &data).unwrap();
    assert!(gap > 1e-3, "gap {gap}");
}

#[test]
fn odds_ratio_cases() {
    let data = common::gaussian_dataset(2, 20, 2, &[(0, 2.0), (1, 2.0)]);
    let mut fit = fit_l1_logistic(&data, 0.01, &SolverConfig::default()).unwrap();
    fit.coefficients_raw = vec![1.0, 1.0];
    assert_eq!(odds_ratio(&fit, &[0.4, 0.1], &[0.4, 0.1]).unwrap().value, 1.0);
    let r = odds_ratio(&fit, &[0.3, -0.1], &[0.0, 0.0]).unwrap().value;
    assert!((r - 0.2f64.exp()).abs() < 1e-15);
    fit.coefficients_raw = vec![1.0, 0.0];
    let r = odds_ratio(&fit, &[2f64.ln(), 5.0], &[0.0, 5.0]).unwrap().value;
    assert!((r - 2.0).abs() < 1e-15);
}

#[test]
fn probabilities_rise_toward_one() {
    let data = common::gaussian_dataset(4, 10, 1, &[]);
    let mut fit = fit_l1_logistic(&data, 1.0, &SolverConfig::default()).unwrap();
    let mut last = 0.0;
    for t in [1.0, 5.0, 20.0, 60.0] {
        fit.intercept = t;
        let p = fitted_probabilities(&fit, &data).unwrap()[0];
        assert!(p > last && p < 1.0 + 1e-15);
        last = p;
    }
    assert!(last > 1.0 - 1e-12);
}
