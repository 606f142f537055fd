mod common;

use sparse_cc::path::{default_k_max, nominal_floor_count};
use sparse_cc::simulate::{make_truth, sample_case_control, GroundTruth, MarginalKind, MarginalSpec};
use sparse_cc::solver::lambda_max;
use sparse_cc::{bbm, fit_l1_logistic, gbm, grid_path, support_in_path, Dataset, SolverConfig};

/// Five columns with well separated signal strengths, so the columns enter
/// one at a time in a fixed order.
fn staircase() -> Dataset {
    common::gaussian_dataset(40, 400, 5, &[(0, 2.0), (1, 1.4), (2, 0.9), (3, 0.5), (4, 0.25)])
}

fn alpha_for(data: &Dataset) -> f64 {
    1e-4 * lambda_max(data)
}

#[test]
fn bisection_finds_known_root() {
    let out = bbm(|z| (z - 2.0).signum(), 0.0, 8.0, 1e-6).unwrap();
    assert!((out.z - 2.0).abs() <= 1e-6);
    // ceil(log2(8 / 1e-6)) + 2 evaluations at most
    assert!(out.evaluations <= (8e6f64).log2().ceil() as usize + 2);
    let at_start = bbm(|z| z - 1.0, 1.0, 5.0, 1e-3).unwrap();
    assert_eq!((at_start.z, at_start.root, at_start.evaluations), (1.0, true, 2));
    assert!(bbm(|z| z + 1.0, 0.0, 1.0, 1e-3).is_err());
}

#[test]
fn bisection_on_support_size_is_verified_by_refit() {
    let data = common::gaussian_dataset(41, 100, 10, &[(0, 1.5), (2, 1.0), (5, 0.8), (7, 0.5)]);
    let config = SolverConfig::default();
    let h = |lambda: f64| fit_l1_logistic(&data, lambda, &config).unwrap().active_count() as f64 - 3.0;
    let out = bbm(h, config.lambda_floor, lambda_max(&data), 1e-9).unwrap();
    assert!(out.root);
    assert_eq!(fit_l1_logistic(&data, out.z, &config).unwrap().active_count(), 3);
}

#[test]
fn every_support_size_on_the_staircase() {
    let data = staircase();
    let config = SolverConfig::default();
    // dense sweep: sizes along the path are monotone and hit every k
    let lmax = lambda_max(&data);
    let mut seen = Vec::new();
    for i in 0..=400 {
        let fit = fit_l1_logistic(&data, lmax * (1e-6f64).powf(i as f64 / 400.0), &config).unwrap();
        seen.push(fit.active_count());
    }
    assert!(seen.windows(2).all(|w| w[0] <= w[1]));
    assert!((0..=5).all(|k| seen.contains(&k)));

    let sketch = gbm(&data, alpha_for(&data), &config, 5).unwrap();
    assert_eq!(sketch.entries.keys().copied().collect::<Vec<_>>(), vec![0, 1, 2, 3, 4, 5]);
    assert!(sketch.missing.is_empty());
    assert_eq!(sketch.get(2).unwrap().fit.active_set, vec![0, 1]);
}

#[test]
fn zero_depth_sketch() {
    let data = staircase();
    let sketch = gbm(&data, alpha_for(&data), &SolverConfig::default(), 0).unwrap();
    assert_eq!(sketch.entries.len(), 1);
    assert_eq!(sketch.get(0).unwrap().r, lambda_max(&data));
    assert_eq!(sketch.queue_iterations, 0);
    assert_eq!(sketch.solver_calls, 1);
}

#[test]
fn sketch_entries_are_reproducible_and_accounted() {
    let config = SolverConfig::default();
    for seed in 0..5 {
        let data = common::gaussian_dataset(50 + seed, 60, 25, &[(0, 1.0), (10, 1.0), (20, -1.0)]);
        let sketch = gbm(&data, alpha_for(&data), &config, default_k_max(&data)).unwrap();
        let closing = sketch.solver_calls - 1 - sketch.queue_iterations;
        assert!(closing <= 1);
        for (&k, e) in &sketch.entries {
            assert!(e.fit.converged);
            assert_eq!(e.fit.active_count(), k);
            assert_eq!(fit_l1_logistic(&data, e.r, &config).unwrap().active_count(), k);
        }
        let mut keys: Vec<usize> = sketch.entries.keys().copied().chain(sketch.missing.iter().copied()).collect();
        keys.sort_unstable();
        assert_eq!(keys, (0..=sketch.k_max).collect::<Vec<_>>());
    }
}

#[test]
fn floor_fit_is_nearly_dense() {
    let config = SolverConfig::default();
    for seed in 0..5 {
        let data = common::gaussian_dataset(60 + seed, 50, 20, &[(0, 0.5)]);
        assert_eq!(nominal_floor_count(&data), 20);
        let top = fit_l1_logistic(&data, lambda_max(&data), &config).unwrap();
        assert_eq!(top.active_count(), 0);
        let bottom = fit_l1_logistic(&data, config.lambda_floor, &config).unwrap();
        assert!(bottom.active_count() as f64 >= 0.9 * 20.0);
    }
}

#[test]
fn grid_endpoints_and_spacing() {
    let data = staircase();
    let config = SolverConfig::default();
    let two = grid_path(&data, 2, &config).unwrap();
    assert_eq!(two.grid, vec![lambda_max(&data), config.lambda_floor]);
    assert_eq!(two.solver_calls, 2);
    let grid = grid_path(&data, 37, &config).unwrap();
    assert_eq!(grid.fits.len(), 37);
    let ratio = grid.grid[1] / grid.grid[0];
    for w in grid.grid.windows(2) {
        assert!(w[1] < w[0]);
        assert!((w[1] / w[0] - ratio).abs() < 1e-12);
    }
    assert!(grid_path(&data, 1, &config).is_err());
}

#[test]
fn support_membership() {
    let data = staircase();
    let config = SolverConfig::default();
    let spec = MarginalSpec::new(MarginalKind::NorIid, 5);
    let truth_for = |beta: Vec<f64>| GroundTruth::new(spec, beta, 0.5, 0.0).unwrap();
    let sketch = gbm(&data, alpha_for(&data), &config, 5).unwrap();
    assert!(support_in_path(&sketch, &truth_for(vec![0.0; 5])));
    assert!(support_in_path(&sketch, &truth_for(vec![1.0, 1.0, 0.0, 0.0, 0.0])));
    let sparse_grid = grid_path(&data, 2, &config).unwrap();
    assert!(!support_in_path(&sparse_grid, &truth_for(vec![1.0, 1.0, 0.0, 0.0, 0.0])));
}

#[test]
fn figure_one_instance_recovers_support() {
    let spec = MarginalSpec::new(MarginalKind::NorIid, 15);
    let truth = make_truth(&spec, 3, 1.0, 0.01, 200_000, 1).unwrap();
    let config = SolverConfig::default();
    let mut hits = 0;
    for rep in 0..50 {
        let data = sample_case_control(&truth, 150, 1000 + rep).unwrap();
        let sketch = gbm(&data, alpha_for(&data), &config, 15).unwrap();
        assert!(sketch.entries.len() <= 16);
        if sketch.get(3).is_some_and(|e| e.fit.active_set == truth.support) {
            hits += 1;
        }
    }
    assert!(hits >= 30, "{hits}/50");
}

#[test]
fn sketch_covers_at_least_as_often_as_equal_grid() {
    let spec = MarginalSpec::new(MarginalKind::NorIid, 50);
    let truth = make_truth(&spec, 3, 1.0, 0.01, 200_000, 2).unwrap();
    let config = SolverConfig::default();
    let (mut sketch_hits, mut grid_hits) = (0, 0);
    for rep in 0..50 {
        let data = sample_case_control(&truth, 100, 2000 + rep).unwrap();
        let sketch = gbm(&data, alpha_for(&data), &config, default_k_max(&data)).unwrap();
        let grid = grid_path(&data, sketch.solver_calls, &config).unwrap();
        assert_eq!(grid.solver_calls, sketch.solver_calls);
        sketch_hits += support_in_path(&sketch, &truth) as usize;
        grid_hits += support_in_path(&grid, &truth) as usize;
    }
    assert!(sketch_hits >= grid_hits, "{sketch_hits} vs {grid_hits}");
}
