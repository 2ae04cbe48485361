use std::sync::Arc;

use mvjump::closed_forms::{explicit_path_sign_flip, ScalarCaseParams};
use mvjump::hamiltonian::DEFAULT_TOL;
use mvjump::policy::PolicySpec;
use mvjump::riccati::solve;
use mvjump::sim::{
    simulate, simulate_policy, verify_frontier, verify_value, verify_value_with, TabulatedFeedback, ZeroFeedback,
};
use mvjump::{JumpMark, JumpSource, MarketModel, SimConfig};

fn one_asset(mu: f64, sigma: f64, marks: &[(f64, f64)]) -> MarketModel {
    let sources = if marks.is_empty() {
        vec![]
    } else {
        vec![JumpSource::new(marks.iter().map(|&(b, w)| JumpMark::new(vec![b], w)).collect())]
    };
    MarketModel::time_invariant(1.0, vec![mu], vec![vec![sigma]], sources).unwrap()
}

fn cfg(n_paths: usize, dt: f64, seed: u64) -> SimConfig {
    SimConfig { n_paths, dt, seed, record_paths: 0, threads: 0 }
}

#[test]
fn diffusion_value_matches_analytic_curve() {
    let sol = Arc::new(solve(one_asset(0.2, 0.3, &[]), 400, DEFAULT_TOL).unwrap());
    let policy = PolicySpec::new(0.0, 1.0, sol.clone()).unwrap();
    let d = policy.d_star();
    let check = verify_value(&sol, d, 0.0, &cfg(20_000, 2e-3, 1)).unwrap();
    let target = (-4.0f64 / 9.0).exp() * d * d;
    assert!((check.target - target).abs() < 1e-9);
    assert!(check.z_score <= 3.0, "{:?} vs {target}", check.estimate);
    assert_eq!(check.stats.signs.sign_changes, 0);
}

#[test]
fn zero_drift_keeps_cost() {
    let sol = Arc::new(solve(one_asset(0.0, 0.3, &[(0.4, 0.6), (-0.3, 0.4)]), 100, DEFAULT_TOL).unwrap());
    assert_eq!(sol.p_minus_0(), 1.0);
    // any vertex: P = 1 so the target is (x0 - d)^2, the optimal rule holds nothing
    let check = verify_value(&sol, 2.0, 0.5, &cfg(2_000, 1e-2, 2)).unwrap();
    assert_eq!(check.target, 2.25);
    assert_eq!(check.z_score, 0.0);
    // a nonzero linear rule leaves the mean unchanged
    let rule = |_t: f64, x: f64, out: &mut [f64]| out[0] = 0.7 * (2.0 - x);
    let stats = simulate(sol.model(), &rule, 0.5, 2.0, &cfg(20_000, 1e-2, 3)).unwrap();
    assert!(stats.mean.z_score(0.5) <= 3.0, "{:?}", stats.mean);
}

#[test]
fn trivial_vertex_and_target() {
    let sol = Arc::new(solve(one_asset(0.15, 0.25, &[(0.4, 0.5), (-0.4, 0.5)]), 200, DEFAULT_TOL).unwrap());
    let check = verify_value(&sol, 1.0, 1.0, &cfg(100, 1e-2, 0)).unwrap();
    assert_eq!(check.target, 0.0);
    assert_eq!(check.estimate.value, 0.0);
    assert_eq!(check.z_score, 0.0);
    let front = verify_frontier(&sol, 1.0, 1.0, &cfg(100, 1e-2, 0)).unwrap();
    assert_eq!(front.stats.variance.value, 0.0);
    assert_eq!(front.mean_z, 0.0);
    assert_eq!(front.variance_z, 0.0);
}

#[test]
fn negative_jump_frontier() {
    let sol = Arc::new(solve(one_asset(0.2, 0.3, &[(-0.5, 1.0)]), 400, DEFAULT_TOL).unwrap());
    let p = (-2.0f64 / 17.0).exp();
    let front = verify_frontier(&sol, 0.0, 1.0, &cfg(20_000, 2e-3, 4)).unwrap();
    assert!((front.target_variance - p / (1.0 - p)).abs() < 1e-6);
    assert!(front.mean_z <= 3.0 && front.variance_z <= 3.0, "{front:?}");
}

#[test]
fn quadratic_homogeneity_of_cost() {
    let sol = Arc::new(solve(one_asset(0.15, 0.25, &[(0.4, 0.5), (-0.4, 0.5)]), 200, DEFAULT_TOL).unwrap());
    let d = 1.0;
    let base = verify_value(&sol, d, 0.0, &cfg(20_000, 1e-2, 5)).unwrap();
    let scaled = verify_value(&sol, d, d - 3.0, &cfg(20_000, 1e-2, 5)).unwrap();
    // same noise and a positively homogeneous rule: every path scales by 3
    let ratio = scaled.estimate.value / base.estimate.value;
    assert!((ratio - 9.0).abs() < 1e-9, "ratio {ratio}");
    assert!((scaled.target / base.target - 9.0).abs() < 1e-12);
    let other = verify_value(&sol, d, d - 3.0, &cfg(20_000, 1e-2, 6)).unwrap();
    let se = (other.estimate.se.powi(2) + 81.0 * base.estimate.se.powi(2)).sqrt();
    assert!((other.estimate.value - 9.0 * base.estimate.value).abs() <= 3.0 * se);
}

#[test]
fn perturbed_rule_never_beats_target_by_much() {
    let sol = Arc::new(solve(one_asset(0.2, 0.3, &[(-0.5, 1.0)]), 400, DEFAULT_TOL).unwrap());
    let d = PolicySpec::new(0.0, 1.0, sol.clone()).unwrap().d_star();
    // a far-off scaling makes the gap visible at modest path counts
    let feedback = TabulatedFeedback::new(&sol, d, 1e-2).unwrap().scaled(1.0, 2.0);
    let check = verify_value_with(&sol, &feedback, d, 0.0, &cfg(20_000, 1e-2, 7)).unwrap();
    assert!(check.estimate.value - check.target > 3.0 * check.estimate.se, "{:?} vs {}", check.estimate, check.target);
}

#[test]
fn zero_rule_under_threads() {
    let model = one_asset(0.15, 0.25, &[(0.4, 0.5)]);
    let stats = simulate(&model, &ZeroFeedback, 3.0, 0.0, &SimConfig { threads: 3, ..cfg(1_000, 0.1, 0) }).unwrap();
    assert_eq!(stats.mean.value, 3.0);
    assert_eq!(stats.second_moment.value, 9.0);
}

/// Per-path sup distance between the Euler path and the exact path driven
/// by the same Brownian increments and arrival times, relative to `|x0 - d*|`.
fn matched_noise_errors(dt: f64, n_paths: usize) -> Vec<f64> {
    let params = ScalarCaseParams::new(2.0, 0.3, 0.8).unwrap();
    let sol = Arc::new(solve(params.to_model(1.0).unwrap(), 2000, DEFAULT_TOL).unwrap());
    let policy = PolicySpec::new(0.0, 1.0, sol).unwrap();
    let d = policy.d_star();
    let feedback = TabulatedFeedback::for_policy(&policy, dt).unwrap();
    let config = SimConfig { n_paths, dt, seed: 9, record_paths: n_paths, threads: 0 };
    let stats = simulate_policy(&policy, &config).unwrap();
    assert!(stats.paths.iter().any(|r| !r.arrivals.is_empty()));

    let mut errors: Vec<f64> = stats
        .paths
        .iter()
        .map(|record| {
            let increments: Vec<(f64, f64, f64)> =
                record.increments.iter().map(|inc| (inc.t0, inc.t1, inc.dw[0])).collect();
            let vhat = |t: f64| feedback.vhat_minus_at(t)[0];
            let exact = explicit_path_sign_flip(&params, d, 0.0, vhat, &increments, &record.arrivals).unwrap();
            assert_eq!(exact.len(), record.points.len());
            let mut worst: f64 = 0.0;
            for (e, s) in exact.iter().zip(&record.points) {
                assert_eq!(e.t, s.t);
                assert_eq!(e.is_jump, s.is_jump);
                assert_eq!((e.x - d).signum(), (s.x - d).signum());
                worst = worst.max((e.x - s.x).abs());
            }
            worst / d.abs()
        })
        .collect();
    errors.sort_by(f64::total_cmp);
    errors
}

#[test]
fn explicit_path_matches_simulation_on_shared_noise() {
    let coarse = matched_noise_errors(1e-4, 100);
    let fine = matched_noise_errors(1e-5, 40);
    let median = |e: &[f64]| e[e.len() / 2];
    assert!(median(&coarse) <= 1e-3, "median sup error {}", median(&coarse));
    // Euler has strong order 1/2: a tenfold smaller step gains about sqrt(10)
    let ratio = median(&coarse) / median(&fine);
    assert!((2.0..5.0).contains(&ratio), "ratio {ratio}");
}
