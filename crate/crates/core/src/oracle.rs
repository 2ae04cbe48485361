//! Cross-checks of the generic solver against closed forms, a grid search
//! and structural invariants. Each check yields an [`OracleRow`].

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::closed_forms::{
    case_beta_neg, hstar_minus_beta_pos, integrate_p_minus, plus_side_check, vhat_minus_beta_pos, ScalarCaseParams,
};
use crate::error::Result;
use crate::hamiltonian::{coercivity_radius, minimize, minimize_brute, Side, DEFAULT_TOL};
use crate::market::MarketModel;
use crate::policy::feedback_about;
use crate::riccati::{analytic_diffusion_p_minus, solve, RiccatiSolution};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub name: String,
    pub observed: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl OracleRow {
    /// Passes when `observed <= tolerance`.
    pub fn at_most(name: impl Into<String>, observed: f64, tolerance: f64) -> Self {
        Self { name: name.into(), observed, tolerance, passed: observed <= tolerance }
    }

    pub fn flag(name: impl Into<String>, passed: bool) -> Self {
        Self { name: name.into(), observed: f64::from(u8::from(!passed)), tolerance: 0.0, passed }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleReport {
    pub rows: Vec<OracleRow>,
}

impl OracleReport {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    fn extend(&mut self, rows: impl IntoIterator<Item = OracleRow>) {
        self.rows.extend(rows);
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
        writeln!(f, "{:<width$}  {:>24}  {:>24}  result", "check", "observed", "tolerance")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<width$}  {:>24.16e}  {:>24.16e}  {}",
                r.name,
                r.observed,
                r.tolerance,
                if r.passed { "PASS" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

fn max_abs(values: impl Iterator<Item = f64>) -> f64 {
    values.map(f64::abs).fold(0.0, f64::max)
}

fn plus_rows(label: &str, sol: &RiccatiSolution) -> Vec<OracleRow> {
    let check = plus_side_check(sol);
    vec![
        OracleRow::at_most(format!("{label}: |P+ - 1|"), check.max_p_plus_deviation, 1e-10),
        OracleRow::at_most(format!("{label}: |vhat+|"), check.max_vhat_plus, 1e-10),
    ]
}

/// Pure diffusion against `exp(-(mu/sigma)^2 (T - t))`.
pub fn diffusion_oracle(mu: f64, sigma: f64, steps: usize) -> Result<Vec<OracleRow>> {
    let model = MarketModel::time_invariant(1.0, vec![mu], vec![vec![sigma]], vec![])?;
    let curve = analytic_diffusion_p_minus(&model)?;
    let sol = solve(model, steps, DEFAULT_TOL)?;
    let err = max_abs(sol.grid().iter().zip(sol.p_minus()).map(|(t, q)| q - curve.at(*t)));
    let mut rows = vec![OracleRow::at_most("diffusion: |P- - exact|", err, 1e-6)];
    rows.extend(plus_rows("diffusion", &sol));
    Ok(rows)
}

/// Non-positive jump size: constant `vhat-` and exponential `P-`.
pub fn negative_jump_oracle(p: &ScalarCaseParams, steps: usize) -> Result<Vec<OracleRow>> {
    let case = case_beta_neg(p, 1.0)?;
    let sol = solve(p.to_model(1.0)?, steps, DEFAULT_TOL)?;
    let vhat_err = max_abs(sol.vhat_minus().iter().map(|v| v[0] - case.vhat_minus));
    let p0_err = (sol.p_minus_0() - case.p_minus(0.0)).abs();
    let curve_err = max_abs(sol.grid().iter().zip(sol.p_minus()).map(|(t, q)| q - case.p_minus(*t)));
    let label = format!("beta={}", p.beta);
    let mut rows = vec![
        OracleRow::at_most(format!("{label}: |vhat- - mu/(sigma^2+beta^2)|"), vhat_err, 1e-8),
        OracleRow::at_most(format!("{label}: |P-(0) - exact|"), p0_err, 1e-6),
        OracleRow::at_most(format!("{label}: |P- - exact| on grid"), curve_err, 1e-6),
    ];
    rows.extend(plus_rows(&label, &sol));
    Ok(rows)
}

/// Positive jump size: piecewise closed form for the minus side and a
/// scalar RK4 reference at ten times the resolution.
pub fn positive_jump_oracle(p: &ScalarCaseParams, steps: usize) -> Result<Vec<OracleRow>> {
    let model = p.to_model(1.0)?;
    let sol = solve(model.clone(), steps, DEFAULT_TOL)?;
    let mut vhat_err: f64 = 0.0;
    let mut h_err: f64 = 0.0;
    let probes = [0.05, 0.2, 0.5, 0.8, 1.0];
    for &q in probes.iter().chain(sol.p_minus().iter().step_by((steps / 20).max(1))) {
        let r = minimize(Side::Minus, &model, 0.0, 1.0, q, DEFAULT_TOL)?;
        vhat_err = vhat_err.max((r.argmin[0] - vhat_minus_beta_pos(p, q)?).abs());
        h_err = h_err.max((r.value - hstar_minus_beta_pos(p, q)?).abs());
    }
    let fine = integrate_p_minus(p, 1.0, 10 * steps)?;
    let ode_err = max_abs(sol.p_minus().iter().enumerate().map(|(i, q)| q - fine[10 * i]));
    let label = format!("mu={},sigma={},beta={}", p.mu, p.sigma, p.beta);
    let mut rows = vec![
        OracleRow::at_most(format!("{label}: |vhat- - closed form|"), vhat_err, 1e-6),
        OracleRow::at_most(format!("{label}: |H-* - closed form|"), h_err, 1e-6),
        OracleRow::at_most(format!("{label}: |P- - scalar RK4 x10|"), ode_err, 1e-6),
    ];
    rows.extend(plus_rows(&label, &sol));
    Ok(rows)
}

/// Worst gap between the projected-gradient minimizer and the grid search
/// over random weights in `[alpha, 1]^2`, both sides, random times.
pub fn brute_force_gap(model: &MarketModel, samples: usize, seed: u64) -> Result<f64> {
    let alpha = model.alpha_bound()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let pp = rng.random_range(alpha..=1.0);
        let pm = rng.random_range(alpha..=1.0);
        let t = rng.random_range(0.0..=model.horizon());
        for side in [Side::Plus, Side::Minus] {
            let fast = minimize(side, model, t, pp, pm, DEFAULT_TOL)?;
            let radius = coercivity_radius(model, side, pp, pm).max(1e-3);
            let brute = minimize_brute(side, model, t, pp, pm, radius, 401)?;
            worst = worst.max((fast.value - brute.value).abs());
        }
    }
    Ok(worst)
}

/// Structural properties every solution must have. `feedback_samples`
/// random `(t, x)` pairs test that the feedback never shorts.
pub fn invariant_rows(sol: &RiccatiSolution, feedback_samples: usize, seed: u64) -> Result<Vec<OracleRow>> {
    let model = sol.model();
    let alpha = sol.alpha();
    let h_max = sol.hstar_plus().iter().chain(sol.hstar_minus()).copied().fold(f64::NEG_INFINITY, f64::max);
    let all_p = || sol.p_plus().iter().chain(sol.p_minus());
    let p_min = all_p().copied().fold(f64::INFINITY, f64::min);
    let p_max = all_p().copied().fold(f64::NEG_INFINITY, f64::max);
    let monotone = sol.p_plus().windows(2).all(|w| w[1] >= w[0]) && sol.p_minus().windows(2).all(|w| w[1] >= w[0]);
    let n = sol.step_count();
    let terminal = (sol.p_plus()[n] - 1.0).abs().max((sol.p_minus()[n] - 1.0).abs());
    let feasible = model.feasibility_integral() > 0.0;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut most_negative: f64 = 0.0;
    for _ in 0..feedback_samples {
        let t = rng.random_range(0.0..=sol.horizon());
        let x = rng.random_range(-10.0..10.0);
        let d = rng.random_range(-2.0..2.0);
        for v in feedback_about(sol, d, t, x)? {
            most_negative = most_negative.min(v);
        }
    }

    Ok(vec![
        OracleRow::at_most("max H*", h_max, 0.0),
        OracleRow::flag("alpha <= P <= 1", p_min >= alpha && p_max <= 1.0),
        OracleRow::flag("P nondecreasing", monotone),
        OracleRow::at_most("|P(T) - 1|", terminal, 0.0),
        OracleRow::flag("truncation inactive", !sol.truncation_active()),
        OracleRow::flag("P-(0) < 1 when feasible", !feasible || sol.p_minus_0() < 1.0),
        OracleRow::at_most("-min feedback", 0.0 - most_negative, 0.0),
    ])
}

/// Observed convergence order from solutions at `steps`, `2 steps` and
/// `4 steps`, compared at the coarse grid points. `None` when the
/// differences are at roundoff level, as for a trivial solution.
pub fn observed_order(model: &MarketModel, steps: usize) -> Result<Option<f64>> {
    let coarse = solve(model.clone(), steps, DEFAULT_TOL)?;
    let mid = solve(model.clone(), 2 * steps, DEFAULT_TOL)?;
    let fine = solve(model.clone(), 4 * steps, DEFAULT_TOL)?;
    let e1 = coarse.max_difference(&mid)?;
    let e2 = mid.max_difference(&fine)?;
    if e1 <= 1e-13 || e2 <= 1e-14 {
        return Ok(None);
    }
    Ok(Some((e1 / e2).log2()))
}

/// Passes when halving the step shrinks the difference by at least 8,
/// or when the differences are at roundoff.
pub fn order_row(model: &MarketModel, steps: usize) -> Result<OracleRow> {
    let order = observed_order(model, steps)?;
    Ok(match order {
        None => OracleRow::flag("step halving (exact)", true),
        Some(q) => OracleRow {
            name: "step halving: error ratio".into(),
            observed: q.exp2(),
            tolerance: 8.0,
            passed: q >= 3.0,
        },
    })
}

/// The scalar parameter sets with explicit answers.
pub fn standard_suite(steps: usize) -> Result<OracleReport> {
    let mut report = OracleReport::default();
    report.extend(diffusion_oracle(0.2, 0.3, steps)?);
    report.extend(negative_jump_oracle(&ScalarCaseParams::new(0.2, 0.3, -0.5)?, steps)?);
    for (mu, sigma, beta) in [(2.0, 0.3, 0.8), (0.2, 0.3, 0.4)] {
        report.extend(positive_jump_oracle(&ScalarCaseParams::new(mu, sigma, beta)?, steps)?);
    }
    Ok(report)
}

/// Checks that need no closed form, run on an arbitrary market.
pub fn model_suite(model: &MarketModel, steps: usize, seed: u64) -> Result<OracleReport> {
    let mut report = OracleReport::default();
    let sol = solve(model.clone(), steps, DEFAULT_TOL)?;
    report.extend(invariant_rows(&sol, 1_000, seed)?);
    if model.assets() <= 3 {
        report.rows.push(OracleRow::at_most("|minimize - grid search|", brute_force_gap(model, 40, seed)?, 1e-6));
    }
    report.rows.push(order_row(model, 16)?);
    Ok(report)
}
