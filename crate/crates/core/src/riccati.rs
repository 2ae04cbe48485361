//! Backward integration of the coupled system
//!
//! ```text
//! dP+/dt = -H+*(t, P+, P-),   dP-/dt = -H-*(t, P+, P-),   P+(T) = P-(T) = 1
//! ```
//!
//! with classical RK4 on a uniform grid. The right-hand side is evaluated at
//! the clamped arguments `g(P) = alpha v (P ^ 1)`; since the exact solution
//! stays in `[alpha, 1]`, any stage that would need the clamp is reported as
//! a numerical failure instead of being silently truncated.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hamiltonian::{minimize_at_knot, HamiltonianResult, Side, DEFAULT_TOL};
use crate::market::{Knot, MarketModel};

pub const DEFAULT_STEPS: usize = 2000;
pub const MIN_STEPS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub steps: usize,
    pub tol: f64,
    /// Terminal values `(P+(T), P-(T))`. Anything but `(1, 1)` is only
    /// useful for sensitivity experiments.
    pub terminal: (f64, f64),
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { steps: DEFAULT_STEPS, tol: DEFAULT_TOL, terminal: (1.0, 1.0) }
    }
}

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    model: Arc<MarketModel>,
    grid: Vec<f64>,
    p_plus: Vec<f64>,
    p_minus: Vec<f64>,
    vhat_plus: Vec<Vec<f64>>,
    vhat_minus: Vec<Vec<f64>>,
    hstar_plus: Vec<f64>,
    hstar_minus: Vec<f64>,
    alpha: f64,
    tol: f64,
    truncation_active: bool,
}

/// State and minimizers at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiPoint {
    pub t: f64,
    pub p_plus: f64,
    pub p_minus: f64,
    pub vhat_plus: Vec<f64>,
    pub vhat_minus: Vec<f64>,
}

impl RiccatiSolution {
    pub fn model(&self) -> &Arc<MarketModel> {
        &self.model
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn p_plus(&self) -> &[f64] {
        &self.p_plus
    }

    pub fn p_minus(&self) -> &[f64] {
        &self.p_minus
    }

    pub fn vhat_plus(&self) -> &[Vec<f64>] {
        &self.vhat_plus
    }

    pub fn vhat_minus(&self) -> &[Vec<f64>] {
        &self.vhat_minus
    }

    /// `H+*` at each grid point.
    pub fn hstar_plus(&self) -> &[f64] {
        &self.hstar_plus
    }

    pub fn hstar_minus(&self) -> &[f64] {
        &self.hstar_minus
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn step_count(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.model.horizon()
    }

    /// Whether the clamp `g` ever changed its argument. Always false for a
    /// solution returned by [`solve`].
    pub fn truncation_active(&self) -> bool {
        self.truncation_active
    }

    pub fn p_minus_0(&self) -> f64 {
        self.p_minus[0]
    }

    pub fn p_plus_0(&self) -> f64 {
        self.p_plus[0]
    }

    pub fn point(&self, i: usize) -> RiccatiPoint {
        RiccatiPoint {
            t: self.grid[i],
            p_plus: self.p_plus[i],
            p_minus: self.p_minus[i],
            vhat_plus: self.vhat_plus[i].clone(),
            vhat_minus: self.vhat_minus[i].clone(),
        }
    }

    fn grid_index(&self, t: f64) -> Option<usize> {
        let h = self.horizon() / self.step_count() as f64;
        let i = ((t / h).round() as usize).min(self.step_count());
        ((t - self.grid[i]).abs() <= 1e-12 * self.horizon()).then_some(i)
    }

    /// `(P+, P-)` linearly interpolated, with the minimizers recomputed at
    /// the interpolated weights so they stay exactly optimal.
    pub fn interpolate(&self, t: f64) -> Result<RiccatiPoint> {
        self.model.check_time(t)?;
        if let Some(i) = self.grid_index(t) {
            return Ok(self.point(i));
        }
        let h = self.horizon() / self.step_count() as f64;
        let j = ((t / h).floor() as usize).min(self.step_count() - 1);
        let theta = (t - self.grid[j]) / (self.grid[j + 1] - self.grid[j]);
        let p_plus = self.p_plus[j] + theta * (self.p_plus[j + 1] - self.p_plus[j]);
        let p_minus = self.p_minus[j] + theta * (self.p_minus[j + 1] - self.p_minus[j]);
        let knot = self.model.knot_at(t)?;
        let plus = minimize_at_knot(Side::Plus, knot, p_plus, p_minus, self.tol, Some(&self.vhat_plus[j]))?;
        let minus = minimize_at_knot(Side::Minus, knot, p_plus, p_minus, self.tol, Some(&self.vhat_minus[j]))?;
        Ok(RiccatiPoint {
            t,
            p_plus,
            p_minus,
            vhat_plus: plus.argmin,
            vhat_minus: minus.argmin,
        })
    }

    /// Largest deviation in `(P+, P-)` against a solve on a grid refined by
    /// an integer factor, compared at the common grid points.
    pub fn max_difference(&self, finer: &RiccatiSolution) -> Result<f64> {
        let coarse = self.step_count();
        let fine = finer.step_count();
        if fine % coarse != 0 {
            return Err(Error::Domain(format!("{fine} steps is not a refinement of {coarse}")));
        }
        let ratio = fine / coarse;
        Ok((0..=coarse)
            .map(|i| {
                let k = i * ratio;
                (self.p_plus[i] - finer.p_plus[k])
                    .abs()
                    .max((self.p_minus[i] - finer.p_minus[k]).abs())
            })
            .fold(0.0, f64::max))
    }
}

struct Stage {
    warm_plus: Vec<f64>,
    warm_minus: Vec<f64>,
}

impl Stage {
    fn evaluate(
        &mut self,
        knot: &Knot,
        p_plus: f64,
        p_minus: f64,
        tol: f64,
    ) -> Result<(HamiltonianResult, HamiltonianResult)> {
        let plus = minimize_at_knot(Side::Plus, knot, p_plus, p_minus, tol, Some(&self.warm_plus))?;
        let minus = minimize_at_knot(Side::Minus, knot, p_plus, p_minus, tol, Some(&self.warm_minus))?;
        self.warm_plus.clone_from(&plus.argmin);
        self.warm_minus.clone_from(&minus.argmin);
        Ok((plus, minus))
    }
}

/// Solves with the default terminal condition `P(T) = 1`.
pub fn solve(model: impl Into<Arc<MarketModel>>, steps: usize, tol: f64) -> Result<RiccatiSolution> {
    solve_with(model, SolveOptions { steps, tol, ..SolveOptions::default() })
}

pub fn solve_with(model: impl Into<Arc<MarketModel>>, options: SolveOptions) -> Result<RiccatiSolution> {
    let model: Arc<MarketModel> = model.into();
    let SolveOptions { steps, tol, terminal } = options;
    if steps < MIN_STEPS {
        return Err(Error::Domain(format!("need at least {MIN_STEPS} steps, got {steps}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    if !(terminal.0 > 0.0 && terminal.1 > 0.0) {
        return Err(Error::Domain(format!("terminal values must be positive, got {terminal:?}")));
    }
    let report = model.validate();
    for check in &report.checks {
        // feasibility only matters for the mean-variance layer
        if !check.passed && !check.name.starts_with("feasibility") {
            return Err(Error::Domain(format!("model fails '{}': {}", check.name, check.detail)));
        }
    }

    let alpha = model.alpha_bound()?;
    let lower = alpha * terminal.0.min(terminal.1);
    let upper = terminal.0.max(terminal.1);
    let horizon = model.horizon();
    let h = horizon / steps as f64;
    let grid: Vec<f64> = (0..=steps)
        .map(|i| if i == steps { horizon } else { i as f64 * h })
        .collect();

    let clamp = |t: f64, p_plus: f64, p_minus: f64| -> Result<(f64, f64)> {
        let g = |p: f64| p.min(upper).max(lower);
        if g(p_plus) != p_plus || g(p_minus) != p_minus || !p_plus.is_finite() || !p_minus.is_finite() {
            return Err(Error::TruncationActive { t, p_plus, p_minus, alpha: lower });
        }
        Ok((p_plus, p_minus))
    };

    let n = steps + 1;
    let mut p_plus = vec![0.0; n];
    let mut p_minus = vec![0.0; n];
    let mut vhat_plus = vec![Vec::new(); n];
    let mut vhat_minus = vec![Vec::new(); n];
    let mut hstar_plus = vec![0.0; n];
    let mut hstar_minus = vec![0.0; n];

    let last_knot = model.knot_at(horizon)?;
    let mut stage = Stage {
        warm_plus: crate::hamiltonian::initial_iterate(Side::Plus, last_knot),
        warm_minus: crate::hamiltonian::initial_iterate(Side::Minus, last_knot),
    };

    let mut record = |i: usize, stage: &mut Stage, pp: f64, pm: f64| -> Result<()> {
        let knot = model.knot_at(grid[i])?;
        let (plus, minus) = stage.evaluate(knot, pp, pm, tol)?;
        p_plus[i] = pp;
        p_minus[i] = pm;
        hstar_plus[i] = plus.value;
        hstar_minus[i] = minus.value;
        vhat_plus[i] = plus.argmin;
        vhat_minus[i] = minus.argmin;
        Ok(())
    };

    let (mut pp, mut pm) = terminal;
    record(steps, &mut stage, pp, pm)?;

    for i in (0..steps).rev() {
        let t1 = grid[i + 1];
        let t0 = grid[i];
        let dt = t1 - t0;
        let knot = model.knot_for_interval(t0, t1);
        // Backward in time: with s = T - t, dP/ds = H*(P).
        let mut rhs = |t: f64, a: f64, b: f64| -> Result<(f64, f64)> {
            let (a, b) = clamp(t, a, b)?;
            let (plus, minus) = stage.evaluate(knot, a, b, tol)?;
            Ok((plus.value, minus.value))
        };
        let k1 = rhs(t1, pp, pm)?;
        let k2 = rhs(t1 - 0.5 * dt, pp + 0.5 * dt * k1.0, pm + 0.5 * dt * k1.1)?;
        let k3 = rhs(t1 - 0.5 * dt, pp + 0.5 * dt * k2.0, pm + 0.5 * dt * k2.1)?;
        let k4 = rhs(t0, pp + dt * k3.0, pm + dt * k3.1)?;
        pp += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        pm += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        clamp(t0, pp, pm)?;
        record(i, &mut stage, pp, pm)?;
    }

    let solution = RiccatiSolution {
        model,
        grid,
        p_plus,
        p_minus,
        vhat_plus,
        vhat_minus,
        hstar_plus,
        hstar_minus,
        alpha,
        tol,
        truncation_active: false,
    };
    if terminal == (1.0, 1.0) && report.feasibility_integral > 0.0 && !(solution.p_minus_0() < 1.0) {
        return Err(Error::Invariant(format!(
            "P-(0) = {} but the model is feasible; expected P-(0) < 1",
            solution.p_minus_0()
        )));
    }
    Ok(solution)
}

/// `t -> exp(-int_t^T mu^T Sigma^{-1} mu ds)` for piecewise-constant
/// coefficients.
#[derive(Debug, Clone)]
pub struct PremiumCurve {
    grid: Vec<f64>,
    premiums: Vec<f64>,
}

impl PremiumCurve {
    fn from_model(model: &MarketModel) -> Result<Self> {
        let premiums = model.knots()[..model.knots().len() - 1]
            .iter()
            .enumerate()
            .map(|(k, knot)| {
                knot.risk_premium()
                    .ok_or_else(|| Error::Numeric(format!("Sigma is singular on segment {k}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid: model.grid().to_vec(), premiums })
    }

    pub fn at(&self, t: f64) -> f64 {
        let integral: f64 = self
            .premiums
            .iter()
            .enumerate()
            .map(|(k, q)| {
                let lo = self.grid[k].max(t);
                let hi = self.grid[k + 1];
                if hi > lo { q * (hi - lo) } else { 0.0 }
            })
            .sum();
        (-integral).exp()
    }
}

/// The lower envelope `exp(-int_t^T mu^T Sigma^{-1} mu ds)`, which bounds
/// both `P+` and `P-` from below on any model.
pub fn lower_bound_curve(model: &MarketModel) -> Result<PremiumCurve> {
    PremiumCurve::from_model(model)
}

/// Exact `P-` for a jump-free market in which the unconstrained Merton
/// portfolio `Sigma^{-1} mu` is already long-only.
pub fn analytic_diffusion_p_minus(model: &MarketModel) -> Result<PremiumCurve> {
    if model.has_jumps() {
        return Err(Error::Domain("closed form requires a market without jumps".into()));
    }
    for (k, knot) in model.knots().iter().enumerate() {
        match &knot.sigma_inv_mu {
            Some(x) if x.iter().all(|&c| c >= 0.0) => {}
            Some(_) => {
                return Err(Error::Domain(format!(
                    "Sigma^-1 mu has a negative component at knot {k}; the no-shorting constraint binds"
                )))
            }
            None => return Err(Error::Numeric(format!("Sigma is singular at knot {k}"))),
        }
    }
    PremiumCurve::from_model(model)
}
