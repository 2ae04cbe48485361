//! The constrained Hamiltonians `H_+` and `H_-` and their minimization over
//! the nonnegative orthant.
//!
//! Writing `s = +1` for the positive side and `s = -1` for the negative side,
//! `a_k = v^T beta_k` and `(P_own, P_other) = (P_s, P_-s)`:
//!
//! ```text
//! H_s(v) = P_own (|v^T sigma|^2 + 2 s v^T mu)
//!        + sum_k w_k ( P_own [((1 + s a_k)^+)^2 - 1 - 2 s a_k] + P_other ((1 + s a_k)^-)^2 )
//! ```
//!
//! Both functions are convex, continuously differentiable and piecewise
//! quadratic in `v`; the pieces change where `1 + s a_k` changes sign.

use crate::error::{Error, Result};
use crate::market::{Knot, MarketModel};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 100_000;

/// Which half-line of the state the Hamiltonian belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Plus => 1.0,
            Side::Minus => -1.0,
        }
    }

    fn weights(self, p_plus: f64, p_minus: f64) -> (f64, f64) {
        match self {
            Side::Plus => (p_plus, p_minus),
            Side::Minus => (p_minus, p_plus),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianResult {
    /// `inf_{v >= 0} H(v)`.
    pub value: f64,
    pub argmin: Vec<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn quad_form(cov: &[f64], v: &[f64]) -> f64 {
    let m = v.len();
    let mut total = 0.0;
    for i in 0..m {
        let row = &cov[i * m..(i + 1) * m];
        total += v[i] * dot(row, v);
    }
    total
}

/// Value of `H_side` at `v` using the coefficients of `knot`.
pub(crate) fn value_at(side: Side, knot: &Knot, v: &[f64], p_plus: f64, p_minus: f64) -> f64 {
    let s = side.sign();
    let (own, other) = side.weights(p_plus, p_minus);
    let mut h = own * (quad_form(&knot.diffusion_cov, v) + 2.0 * s * dot(v, knot.mu()));
    for mark in &knot.marks {
        let a = s * dot(v, &mark.beta);
        let u = 1.0 + a;
        let pos = u.max(0.0);
        let neg = (-u).max(0.0);
        h += mark.weight * (own * (pos * pos - 1.0 - 2.0 * a) + other * neg * neg);
    }
    h
}

/// Gradient of `H_side` at `v`, written into `grad`.
pub(crate) fn gradient_at(
    side: Side,
    knot: &Knot,
    v: &[f64],
    p_plus: f64,
    p_minus: f64,
    grad: &mut [f64],
) {
    let m = v.len();
    let s = side.sign();
    let (own, other) = side.weights(p_plus, p_minus);
    for i in 0..m {
        let row = &knot.diffusion_cov[i * m..(i + 1) * m];
        grad[i] = 2.0 * own * (dot(row, v) + s * knot.mu()[i]);
    }
    for mark in &knot.marks {
        let u = 1.0 + s * dot(v, &mark.beta);
        // d/da of the bracket, times ds/dv = s beta
        let coeff = 2.0 * s * mark.weight * (own * (u.max(0.0) - 1.0) - other * (-u).max(0.0));
        for (g, b) in grad.iter_mut().zip(&mark.beta) {
            *g += coeff * b;
        }
    }
}

/// Projected KKT residual: `|g_i|` on free coordinates, `max(0, -g_i)` on
/// coordinates at the bound.
pub(crate) fn kkt_residual(v: &[f64], grad: &[f64]) -> f64 {
    v.iter()
        .zip(grad)
        .map(|(&x, &g)| if x > 0.0 { g.abs() } else { (-g).max(0.0) })
        .fold(0.0, f64::max)
}

fn check_args(model: &MarketModel, v: &[f64], p_plus: f64, p_minus: f64) -> Result<()> {
    if v.len() != model.assets() {
        return Err(Error::Domain(format!(
            "portfolio has {} components, market has {} assets",
            v.len(),
            model.assets()
        )));
    }
    if let Some(x) = v.iter().find(|x| !(**x >= 0.0)) {
        return Err(Error::Domain(format!("portfolio component {x} is not >= 0")));
    }
    check_weights(p_plus, p_minus)
}

fn check_weights(p_plus: f64, p_minus: f64) -> Result<()> {
    if !(p_plus > 0.0 && p_minus > 0.0 && p_plus.is_finite() && p_minus.is_finite()) {
        return Err(Error::Domain(format!("need P+ > 0 and P- > 0, got ({p_plus}, {p_minus})")));
    }
    Ok(())
}

pub fn h_plus(model: &MarketModel, t: f64, v: &[f64], p_plus: f64, p_minus: f64) -> Result<f64> {
    check_args(model, v, p_plus, p_minus)?;
    Ok(value_at(Side::Plus, model.knot_at(t)?, v, p_plus, p_minus))
}

pub fn h_minus(model: &MarketModel, t: f64, v: &[f64], p_plus: f64, p_minus: f64) -> Result<f64> {
    check_args(model, v, p_plus, p_minus)?;
    Ok(value_at(Side::Minus, model.knot_at(t)?, v, p_plus, p_minus))
}

pub fn h_value(
    side: Side,
    model: &MarketModel,
    t: f64,
    v: &[f64],
    p_plus: f64,
    p_minus: f64,
) -> Result<f64> {
    match side {
        Side::Plus => h_plus(model, t, v, p_plus, p_minus),
        Side::Minus => h_minus(model, t, v, p_plus, p_minus),
    }
}

pub fn h_gradient(
    side: Side,
    model: &MarketModel,
    t: f64,
    v: &[f64],
    p_plus: f64,
    p_minus: f64,
) -> Result<Vec<f64>> {
    check_args(model, v, p_plus, p_minus)?;
    let mut grad = vec![0.0; v.len()];
    gradient_at(side, model.knot_at(t)?, v, p_plus, p_minus, &mut grad);
    Ok(grad)
}

/// Radius of a ball around the origin that contains every minimizer of
/// `H_side` at this knot.
///
/// Each jump bracket is at least `min(P+, P-) a^2`, so
/// `H_s(v) >= min(P+, P-) lambda_min(Sigma) |v|^2 - 2 P_s |mu| |v|`,
/// which is positive beyond the returned radius while `inf H <= 0`.
pub(crate) fn knot_radius(side: Side, knot: &Knot, p_plus: f64, p_minus: f64) -> f64 {
    let (own, _) = side.weights(p_plus, p_minus);
    let mu_norm = dot(knot.mu(), knot.mu()).sqrt();
    2.0 * own * mu_norm / (p_plus.min(p_minus) * knot.min_eigenvalue())
}

/// Coercivity radius valid at every knot of the model.
pub fn coercivity_radius(model: &MarketModel, side: Side, p_plus: f64, p_minus: f64) -> f64 {
    model
        .knots()
        .iter()
        .map(|knot| knot_radius(side, knot, p_plus, p_minus))
        .fold(0.0, f64::max)
}

/// Starting point: the unconstrained diffusion-only minimizer projected onto
/// the orthant.
pub(crate) fn initial_iterate(side: Side, knot: &Knot) -> Vec<f64> {
    match &knot.sigma_inv_mu {
        Some(x) => x.iter().map(|&c| (-side.sign() * c).max(0.0)).collect(),
        None => vec![0.0; knot.mu().len()],
    }
}

/// Projected gradient with Barzilai-Borwein step lengths and a nonmonotone
/// Armijo backtracking line search.
pub(crate) fn minimize_at_knot(
    side: Side,
    knot: &Knot,
    p_plus: f64,
    p_minus: f64,
    tol: f64,
    start: Option<&[f64]>,
) -> Result<HamiltonianResult> {
    const MEMORY: usize = 10;
    const ARMIJO: f64 = 1e-4;
    let m = knot.mu().len();

    let mut v: Vec<f64> = match start {
        Some(s) if s.len() == m => s.iter().map(|x| x.max(0.0)).collect(),
        _ => initial_iterate(side, knot),
    };
    let mut grad = vec![0.0; m];
    gradient_at(side, knot, &v, p_plus, p_minus, &mut grad);
    let mut f = value_at(side, knot, &v, p_plus, p_minus);

    // The origin is always feasible with H = 0.
    if f > 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
        gradient_at(side, knot, &v, p_plus, p_minus, &mut grad);
        f = 0.0;
    }

    let curvature = 2.0 * p_plus.min(p_minus) * knot.min_eigenvalue().max(1e-300);
    let mut step = 1.0 / curvature.max(1e-12);
    let mut history = [f; MEMORY];
    let mut trial = vec![0.0; m];
    let mut new_grad = vec![0.0; m];
    let mut residual = kkt_residual(&v, &grad);
    let mut iterations = 0;

    while residual > tol {
        if iterations >= MAX_ITERATIONS {
            return Err(Error::NonConvergence { iterations, residual, last_iterate: v });
        }
        iterations += 1;

        let f_ref = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let slack = 4.0 * f64::EPSILON * (1.0 + f_ref.abs());
        let mut lambda = step;
        let mut accepted = false;
        let mut f_new = f;
        for _ in 0..60 {
            for i in 0..m {
                trial[i] = (v[i] - lambda * grad[i]).max(0.0);
            }
            let decrease: f64 = grad.iter().zip(trial.iter().zip(&v)).map(|(g, (a, b))| g * (a - b)).sum();
            f_new = value_at(side, knot, &trial, p_plus, p_minus);
            if f_new <= f_ref + ARMIJO * decrease + slack {
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence { iterations, residual, last_iterate: v });
        }

        gradient_at(side, knot, &trial, p_plus, p_minus, &mut new_grad);
        let mut ss = 0.0;
        let mut sy = 0.0;
        for i in 0..m {
            let s = trial[i] - v[i];
            ss += s * s;
            sy += s * (new_grad[i] - grad[i]);
        }
        step = if sy > 0.0 { (ss / sy).clamp(1e-12, 1e12) } else { 1.0 / curvature.max(1e-12) };
        if ss == 0.0 {
            // The projected step no longer moves: either optimal or stuck in roundoff.
            residual = kkt_residual(&trial, &new_grad);
            v.copy_from_slice(&trial);
            grad.copy_from_slice(&new_grad);
            f = f_new;
            if residual > tol {
                return Err(Error::NonConvergence { iterations, residual, last_iterate: v });
            }
            break;
        }
        v.copy_from_slice(&trial);
        grad.copy_from_slice(&new_grad);
        f = f_new;
        history[iterations % MEMORY] = f;
        residual = kkt_residual(&v, &grad);
    }

    Ok(HamiltonianResult {
        value: f.min(0.0),
        argmin: v,
        iterations,
        kkt_residual: residual,
    })
}

/// `H*_side(t, P+, P-)` and its minimizer.
pub fn minimize(
    side: Side,
    model: &MarketModel,
    t: f64,
    p_plus: f64,
    p_minus: f64,
    tol: f64,
) -> Result<HamiltonianResult> {
    minimize_from(side, model, t, p_plus, p_minus, tol, None)
}

/// As [`minimize`], starting from `start` instead of the default iterate.
pub fn minimize_from(
    side: Side,
    model: &MarketModel,
    t: f64,
    p_plus: f64,
    p_minus: f64,
    tol: f64,
    start: Option<&[f64]>,
) -> Result<HamiltonianResult> {
    check_weights(p_plus, p_minus)?;
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    minimize_at_knot(side, model.knot_at(t)?, p_plus, p_minus, tol, start)
}

/// Exhaustive grid search over `[0, radius]^m` followed by two local
/// refinements. Meant as an independent check of [`minimize`] on small
/// problems.
pub fn minimize_brute(
    side: Side,
    model: &MarketModel,
    t: f64,
    p_plus: f64,
    p_minus: f64,
    radius: f64,
    grid_points: usize,
) -> Result<HamiltonianResult> {
    check_weights(p_plus, p_minus)?;
    let m = model.assets();
    if m > 3 {
        return Err(Error::Domain(format!("grid oracle supports at most 3 assets, got {m}")));
    }
    if grid_points < 3 || !(radius > 0.0) {
        return Err(Error::Domain("grid oracle needs radius > 0 and at least 3 points".into()));
    }
    let knot = model.knot_at(t)?;
    let eval = |v: &[f64]| value_at(side, knot, v, p_plus, p_minus);

    let mut lower = vec![0.0; m];
    let mut spacing = radius / (grid_points - 1) as f64;
    let mut best = vec![0.0; m];
    let mut best_value = eval(&best);
    let mut evaluations = 0;

    for pass in 0..3 {
        let mut index = vec![0usize; m];
        let mut point = vec![0.0; m];
        loop {
            for i in 0..m {
                point[i] = lower[i] + spacing * index[i] as f64;
            }
            let value = eval(&point);
            evaluations += 1;
            if value < best_value {
                best_value = value;
                best.copy_from_slice(&point);
            }
            // odometer increment
            let mut axis = 0;
            while axis < m {
                index[axis] += 1;
                if index[axis] < grid_points {
                    break;
                }
                index[axis] = 0;
                axis += 1;
            }
            if axis == m {
                break;
            }
        }
        if pass < 2 {
            // window of two cells on each side of the incumbent
            let half_width = 2.0 * spacing;
            for i in 0..m {
                lower[i] = (best[i] - half_width).max(0.0);
            }
            spacing = 2.0 * half_width / (grid_points - 1) as f64;
        }
    }

    let mut grad = vec![0.0; m];
    gradient_at(side, knot, &best, p_plus, p_minus, &mut grad);
    Ok(HamiltonianResult {
        value: best_value,
        kkt_residual: kkt_residual(&best, &grad),
        argmin: best,
        iterations: evaluations,
    })
}
