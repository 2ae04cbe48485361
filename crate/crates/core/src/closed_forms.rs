//! One-asset, one-mark, time-invariant special cases with explicit answers.
//!
//! With `m = n = 1`, a single jump size `beta` of unit intensity and
//! `mu, beta >= 0`, the plus side is trivial (`P+ = 1`, `vhat+ = 0`) and the
//! minus side has the piecewise closed form below. For `-1 < beta <= 0` the
//! minimizer is the constant `mu / (sigma^2 + beta^2)`. These formulas are
//! independent of the generic machinery and serve as oracles for it.

use crate::error::{Error, Result};
use crate::market::{JumpMark, JumpSource, MarketModel};
use crate::riccati::{solve, RiccatiSolution};

/// Parameters of the scalar market.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarCaseParams {
    pub mu: f64,
    pub sigma: f64,
    pub beta: f64,
}

/// Which side of `sigma^2 + beta^2 = beta mu` the parameters fall on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `sigma^2 + beta^2 < beta mu`: the first jump carries wealth across the vertex.
    SignFlip,
    /// `sigma^2 + beta^2 = beta mu`.
    Boundary,
    /// `sigma^2 + beta^2 > beta mu`: wealth stays below the vertex.
    Tracking,
}

impl ScalarCaseParams {
    pub fn new(mu: f64, sigma: f64, beta: f64) -> Result<Self> {
        if !(sigma > 0.0) || !mu.is_finite() || !beta.is_finite() || !sigma.is_finite() {
            return Err(Error::Domain(format!("need finite parameters with sigma > 0, got ({mu}, {sigma}, {beta})")));
        }
        if !(beta > -1.0) {
            return Err(Error::Domain(format!("jump size {beta} must exceed -1")));
        }
        Ok(Self { mu, sigma, beta })
    }

    /// `sigma^2 + beta^2 - beta mu`.
    pub fn discriminant(&self) -> f64 {
        self.sigma * self.sigma + self.beta * self.beta - self.beta * self.mu
    }

    pub fn regime(&self) -> Regime {
        let d = self.discriminant();
        if d < 0.0 {
            Regime::SignFlip
        } else if d == 0.0 {
            Regime::Boundary
        } else {
            Regime::Tracking
        }
    }

    fn require_positive(&self) -> Result<()> {
        if self.mu > 0.0 && self.beta > 0.0 {
            Ok(())
        } else {
            Err(Error::Domain(format!("needs mu > 0 and beta > 0, got mu = {}, beta = {}", self.mu, self.beta)))
        }
    }

    /// The market on `[0, horizon]`; `beta = 0` yields a pure diffusion.
    pub fn to_model(&self, horizon: f64) -> Result<MarketModel> {
        let sources = if self.beta == 0.0 {
            vec![]
        } else {
            vec![JumpSource::new(vec![JumpMark::new(vec![self.beta], 1.0)])]
        };
        MarketModel::time_invariant(horizon, vec![self.mu], vec![vec![self.sigma]], sources)
    }
}

/// Minus-side minimizer for `mu, beta > 0`, given `P+ = 1`.
pub fn vhat_minus_beta_pos(p: &ScalarCaseParams, p_minus: f64) -> Result<f64> {
    p.require_positive()?;
    check_p_minus(p_minus)?;
    let ScalarCaseParams { mu, sigma, beta } = *p;
    let crossing = (p_minus * mu - p_minus * beta + beta) / (p_minus * sigma * sigma + beta * beta);
    let interior = mu / (sigma * sigma + beta * beta);
    Ok(match p.regime() {
        Regime::SignFlip => crossing,
        Regime::Tracking => interior,
        Regime::Boundary => {
            debug_assert!((crossing - interior).abs() <= 1e-12 * interior.abs().max(1.0));
            interior
        }
    })
}

/// Minus-side optimal Hamiltonian value for `mu, beta > 0`, given `P+ = 1`.
pub fn hstar_minus_beta_pos(p: &ScalarCaseParams, p_minus: f64) -> Result<f64> {
    p.require_positive()?;
    check_p_minus(p_minus)?;
    Ok(hstar_minus_unchecked(p, p_minus))
}

fn hstar_minus_unchecked(p: &ScalarCaseParams, p_minus: f64) -> f64 {
    let ScalarCaseParams { mu, sigma, beta } = *p;
    if p.discriminant() <= 0.0 {
        let num = mu * p_minus - beta * p_minus + beta;
        -num * num / (sigma * sigma * p_minus + beta * beta) + 1.0 - p_minus
    } else {
        -mu * mu * p_minus / (sigma * sigma + beta * beta)
    }
}

fn check_p_minus(p_minus: f64) -> Result<()> {
    if p_minus > 0.0 && p_minus <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("P- = {p_minus} must lie in (0, 1]")))
    }
}

/// `P-` on the uniform grid `t_i = i T / steps`, integrated backward from
/// `P-(T) = 1` by classical RK4 on `dP-/dt = -H-*(P-)`.
pub fn integrate_p_minus(p: &ScalarCaseParams, horizon: f64, steps: usize) -> Result<Vec<f64>> {
    p.require_positive()?;
    if steps == 0 || !(horizon > 0.0) {
        return Err(Error::Domain("need a positive horizon and at least one step".into()));
    }
    let h = horizon / steps as f64;
    let rhs = |q: f64| -hstar_minus_unchecked(p, q);
    let mut out = vec![0.0; steps + 1];
    let mut q = 1.0;
    out[steps] = q;
    for i in (0..steps).rev() {
        // backward in time: dq/ds = -rhs with s = T - t
        let k1 = -rhs(q);
        let k2 = -rhs(q + 0.5 * h * k1);
        let k3 = -rhs(q + 0.5 * h * k2);
        let k4 = -rhs(q + h * k3);
        q += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        out[i] = q;
    }
    Ok(out)
}

/// Outcome of checking the trivial plus side on a solved model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlusSideCheck {
    pub max_p_plus_deviation: f64,
    pub max_vhat_plus: f64,
    pub passed: bool,
}

/// Solves the scalar market and checks `P+ = 1`, `vhat+ = 0` within 1e-10.
pub fn case_beta_pos_p_plus(p: &ScalarCaseParams, horizon: f64, steps: usize) -> Result<PlusSideCheck> {
    if p.beta < 0.0 || p.mu < 0.0 {
        return Err(Error::Domain(format!(
            "inapplicable: needs mu >= 0 and beta >= 0, got mu = {}, beta = {}",
            p.mu, p.beta
        )));
    }
    let sol = solve(p.to_model(horizon)?, steps, crate::hamiltonian::DEFAULT_TOL)?;
    Ok(plus_side_check(&sol))
}

pub(crate) fn plus_side_check(sol: &RiccatiSolution) -> PlusSideCheck {
    let max_p_plus_deviation = sol.p_plus().iter().map(|q| (q - 1.0).abs()).fold(0.0, f64::max);
    let max_vhat_plus = sol.vhat_plus().iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    PlusSideCheck {
        max_p_plus_deviation,
        max_vhat_plus,
        passed: max_p_plus_deviation <= 1e-10 && max_vhat_plus <= 1e-10,
    }
}

/// The `-1 < beta <= 0` case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaNegCase {
    pub vhat_minus: f64,
    pub p_plus: f64,
    /// Exponential rate `mu^2 / (sigma^2 + beta^2)` of `P-`.
    pub rate: f64,
    pub horizon: f64,
}

impl BetaNegCase {
    pub fn p_minus(&self, t: f64) -> f64 {
        (-self.rate * (self.horizon - t)).exp()
    }
}

pub fn case_beta_neg(p: &ScalarCaseParams, horizon: f64) -> Result<BetaNegCase> {
    if !(p.beta <= 0.0 && p.beta > -1.0 && p.mu > 0.0) {
        return Err(Error::Domain(format!(
            "needs -1 < beta <= 0 and mu > 0, got mu = {}, beta = {}",
            p.mu, p.beta
        )));
    }
    let denom = p.sigma * p.sigma + p.beta * p.beta;
    Ok(BetaNegCase { vhat_minus: p.mu / denom, p_plus: 1.0, rate: p.mu * p.mu / denom, horizon })
}

/// Growth factor of `X - d*` over `[s, t]` while below the vertex, for a
/// minimizer `vhat` held fixed and Brownian increment `dw = W_t - W_s`.
pub fn path_factor(p: &ScalarCaseParams, vhat: f64, s: f64, t: f64, dw: f64) -> Result<f64> {
    if s > t {
        return Err(Error::Domain(format!("interval [{s}, {t}] is reversed")));
    }
    let ScalarCaseParams { mu, sigma, beta } = *p;
    let drift = mu * vhat - beta * vhat + 0.5 * sigma * sigma * vhat * vhat;
    Ok((-drift * (t - s) - sigma * vhat * dw).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplicitPoint {
    pub t: f64,
    pub x: f64,
    pub is_jump: bool,
}

/// Exact wealth path for `mu, beta > 0` driven by given noise.
///
/// `increments` are `(t0, t1, W_t1 - W_t0)` covering the horizon in order;
/// `vhat_minus(t0)` is held over each increment. Every time in
/// `jump_times` must coincide with the end of an increment. Below the
/// vertex `X - d*` is multiplied by [`path_factor`] and by
/// `1 - beta vhat` at each arrival. Above it nothing is held, so after
/// the first jump in the sign-flip regime the path is constant.
///
/// Returns the start point, one point per increment and one post-jump
/// point per arrival.
pub fn explicit_path<F: Fn(f64) -> f64>(
    p: &ScalarCaseParams,
    d_star: f64,
    x0: f64,
    vhat_minus: F,
    increments: &[(f64, f64, f64)],
    jump_times: &[f64],
) -> Result<Vec<ExplicitPoint>> {
    p.require_positive()?;
    if !(x0 < d_star) {
        return Err(Error::Domain(format!("start {x0} must lie below the vertex {d_star}")));
    }
    let mut y = x0 - d_star;
    let mut out = Vec::with_capacity(increments.len() + jump_times.len() + 1);
    out.push(ExplicitPoint { t: increments.first().map_or(0.0, |i| i.0), x: x0, is_jump: false });
    let mut jumps = jump_times.iter().peekable();
    for &(t0, t1, dw) in increments {
        let v = vhat_minus(t0);
        if y < 0.0 {
            y *= path_factor(p, v, t0, t1, dw)?;
        }
        out.push(ExplicitPoint { t: t1, x: d_star + y, is_jump: false });
        while let Some(&&tau) = jumps.peek() {
            if tau > t1 {
                break;
            }
            if (tau - t1).abs() > 1e-12 * (1.0 + t1.abs()) {
                return Err(Error::Domain(format!("jump time {tau} does not end an increment")));
            }
            jumps.next();
            if y < 0.0 {
                y *= 1.0 - p.beta * vhat_minus(tau);
            }
            out.push(ExplicitPoint { t: tau, x: d_star + y, is_jump: true });
        }
    }
    if jumps.next().is_some() {
        return Err(Error::Domain("jump times extend beyond the increments".into()));
    }
    Ok(out)
}

/// [`explicit_path`] restricted to the regime `sigma^2 + beta^2 < beta mu`.
pub fn explicit_path_sign_flip<F: Fn(f64) -> f64>(
    p: &ScalarCaseParams,
    d_star: f64,
    x0: f64,
    vhat_minus: F,
    increments: &[(f64, f64, f64)],
    jump_times: &[f64],
) -> Result<Vec<ExplicitPoint>> {
    if p.regime() != Regime::SignFlip {
        return Err(Error::Domain(format!(
            "sigma^2 + beta^2 - beta mu = {} is not negative",
            p.discriminant()
        )));
    }
    explicit_path(p, d_star, x0, vhat_minus, increments, jump_times)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{minimize, Side, DEFAULT_TOL};
    use crate::riccati::analytic_diffusion_p_minus;
    use approx::assert_relative_eq;

    fn flip() -> ScalarCaseParams {
        ScalarCaseParams::new(2.0, 0.3, 0.8).unwrap()
    }

    fn tracking() -> ScalarCaseParams {
        ScalarCaseParams::new(0.2, 0.3, 0.4).unwrap()
    }

    #[test]
    fn branch_examples() {
        assert_eq!(flip().regime(), Regime::SignFlip);
        assert_eq!(tracking().regime(), Regime::Tracking);
        assert_relative_eq!(vhat_minus_beta_pos(&flip(), 1.0).unwrap(), 2.0 / 0.73, epsilon = 1e-12);
        assert_relative_eq!(vhat_minus_beta_pos(&tracking(), 1.0).unwrap(), 0.8, epsilon = 1e-12);
        assert_relative_eq!(hstar_minus_beta_pos(&tracking(), 1.0).unwrap(), -0.16, epsilon = 1e-12);
        assert_relative_eq!(hstar_minus_beta_pos(&flip(), 1.0).unwrap(), -4.0 / 0.73, epsilon = 1e-12);
        assert!(vhat_minus_beta_pos(&flip(), 0.0).is_err());
        assert!(vhat_minus_beta_pos(&ScalarCaseParams::new(0.2, 0.3, -0.4).unwrap(), 0.5).is_err());
    }

    #[test]
    fn branches_meet_on_the_boundary() {
        // sigma^2 + beta^2 = beta mu with beta = 0.5, sigma = 0.3: mu = 0.68
        let p = ScalarCaseParams { mu: 0.34 / 0.5, sigma: 0.3, beta: 0.5 };
        for &q in &[0.1, 0.5, 1.0] {
            let crossing = (q * p.mu - q * p.beta + p.beta) / (q * p.sigma * p.sigma + p.beta * p.beta);
            let interior = p.mu / (p.sigma * p.sigma + p.beta * p.beta);
            assert_relative_eq!(crossing, 1.0 / p.beta, epsilon = 1e-12);
            assert_relative_eq!(interior, 1.0 / p.beta, epsilon = 1e-12);
            let num = p.mu * q - p.beta * q + p.beta;
            let first = -num * num / (p.sigma * p.sigma * q + p.beta * p.beta) + 1.0 - q;
            let second = -p.mu * p.mu * q / (p.sigma * p.sigma + p.beta * p.beta);
            assert_relative_eq!(first, second, epsilon = 1e-12);
        }
    }

    #[test]
    fn closed_forms_match_minimizer() {
        for p in [flip(), tracking(), ScalarCaseParams::new(1.0, 0.5, 0.6).unwrap()] {
            let model = p.to_model(1.0).unwrap();
            for &q in &[0.05, 0.3, 0.7, 1.0] {
                let r = minimize(Side::Minus, &model, 0.5, 1.0, q, DEFAULT_TOL).unwrap();
                assert!((r.argmin[0] - vhat_minus_beta_pos(&p, q).unwrap()).abs() <= 1e-8);
                assert!((r.value - hstar_minus_beta_pos(&p, q).unwrap()).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn plus_side_is_trivial() {
        for p in [flip(), tracking(), ScalarCaseParams::new(1.0, 0.5, 0.6).unwrap()] {
            let check = case_beta_pos_p_plus(&p, 1.0, 400).unwrap();
            assert!(check.passed, "{p:?}: {check:?}");
        }
        let zero_drift = ScalarCaseParams::new(0.0, 0.3, 0.4).unwrap();
        let sol = solve(zero_drift.to_model(1.0).unwrap(), 200, DEFAULT_TOL).unwrap();
        assert!(sol.p_minus().iter().all(|q| (q - 1.0).abs() <= 1e-12));
        let neg = ScalarCaseParams::new(0.2, 0.3, -0.4).unwrap();
        assert!(matches!(case_beta_pos_p_plus(&neg, 1.0, 100), Err(Error::Domain(_))));
    }

    #[test]
    fn beta_zero_reduces_to_diffusion() {
        let p = ScalarCaseParams::new(0.2, 0.3, 0.0).unwrap();
        let case = case_beta_neg(&p, 1.0).unwrap();
        let curve = analytic_diffusion_p_minus(&p.to_model(1.0).unwrap()).unwrap();
        for &t in &[0.0, 0.4, 1.0] {
            assert_relative_eq!(case.p_minus(t), curve.at(t), epsilon = 1e-14);
        }
        let sol = solve(p.to_model(1.0).unwrap(), 400, DEFAULT_TOL).unwrap();
        assert!(plus_side_check(&sol).passed);
    }

    #[test]
    fn beta_negative_case() {
        let p = ScalarCaseParams::new(0.2, 0.3, -0.5).unwrap();
        let case = case_beta_neg(&p, 1.0).unwrap();
        assert_relative_eq!(case.vhat_minus, 0.2 / 0.34, epsilon = 1e-14);
        assert_relative_eq!(case.p_minus(0.0), (-2.0f64 / 17.0).exp(), epsilon = 1e-14);
        assert_eq!(case.p_plus, 1.0);
        let mut prev = 0.0;
        for i in 0..=10 {
            let q = case.p_minus(i as f64 / 10.0);
            assert!(q > prev && q <= 1.0);
            prev = q;
        }
        let sol = solve(p.to_model(1.0).unwrap(), 2000, DEFAULT_TOL).unwrap();
        for (t, q) in sol.grid().iter().zip(sol.p_minus()) {
            assert!((q - case.p_minus(*t)).abs() <= 1e-6);
        }
        assert!(case_beta_neg(&flip(), 1.0).is_err());
    }

    #[test]
    fn scalar_integration_matches_solver() {
        for p in [flip(), tracking()] {
            let sol = solve(p.to_model(1.0).unwrap(), 200, DEFAULT_TOL).unwrap();
            let fine = integrate_p_minus(&p, 1.0, 2000).unwrap();
            for (i, q) in sol.p_minus().iter().enumerate() {
                assert!((q - fine[10 * i]).abs() <= 1e-6, "{p:?} at {i}: {q} vs {}", fine[10 * i]);
            }
        }
    }

    #[test]
    fn path_factor_examples() {
        let p = flip();
        let v = 2.0 / 0.73;
        assert_eq!(path_factor(&p, v, 0.3, 0.3, 0.0).unwrap(), 1.0);
        let expected = (-(p.mu * v - p.beta * v + 0.5 * p.sigma * p.sigma * v * v)).exp();
        assert_relative_eq!(path_factor(&p, v, 0.0, 1.0, 0.0).unwrap(), expected, epsilon = 1e-15);
        let a = path_factor(&p, v, 0.0, 0.4, 0.1).unwrap();
        let b = path_factor(&p, v, 0.4, 1.0, -0.3).unwrap();
        assert_relative_eq!(a * b, path_factor(&p, v, 0.0, 1.0, -0.2).unwrap(), epsilon = 1e-13);
        assert!(path_factor(&p, v, 1.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn explicit_path_shapes() {
        let p = flip();
        let v = |_t: f64| 2.0 / 0.73;
        let incs: Vec<(f64, f64, f64)> = (0..10).map(|i| (i as f64 * 0.1, (i + 1) as f64 * 0.1, 0.01)).collect();
        let none = explicit_path_sign_flip(&p, 1.0, 0.0, v, &incs, &[]).unwrap();
        assert_eq!(none.len(), 11);
        assert!(none.iter().all(|q| q.x < 1.0));
        let direct = path_factor(&p, v(0.0), 0.0, 1.0, 0.1).unwrap();
        assert_relative_eq!(none[10].x - 1.0, -direct, epsilon = 1e-12);

        let jumps = [incs[2].1, incs[6].1];
        let two = explicit_path_sign_flip(&p, 1.0, 0.0, v, &incs, &jumps).unwrap();
        assert_eq!(two.len(), 13);
        let first = two.iter().position(|q| q.is_jump).unwrap();
        assert!(two[first - 1].x < 1.0 && two[first].x > 1.0);
        // above the vertex the position is zero, so the second arrival changes nothing
        assert!(two[first..].iter().all(|q| q.x == two[first].x));

        assert!(explicit_path_sign_flip(&tracking(), 1.0, 0.0, v, &incs, &[]).is_err());
        assert!(explicit_path_sign_flip(&p, 1.0, 2.0, v, &incs, &[]).is_err());
        assert!(explicit_path_sign_flip(&p, 1.0, 0.0, v, &incs, &[0.15]).is_err());
    }

    #[test]
    fn tracking_regime_stays_below() {
        let p = tracking();
        let v = |_t: f64| 0.8;
        let incs: Vec<(f64, f64, f64)> = (0..20).map(|i| (i as f64 * 0.05, (i + 1) as f64 * 0.05, -0.05)).collect();
        let jumps = [incs[3].1, incs[4].1, incs[15].1];
        let path = explicit_path(&p, 1.0, 0.0, v, &incs, &jumps).unwrap();
        assert!(path.iter().all(|q| q.x < 1.0));
    }
}
