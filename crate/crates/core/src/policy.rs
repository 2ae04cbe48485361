//! From the ODE solution to the mean-variance answer: value function,
//! Lagrangian value, vertex `d*`, feedback portfolio and efficient frontier.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::riccati::RiccatiSolution;

/// `P+(t) (x^+)^2 + P-(t) (x^-)^2`.
pub fn value_function(t: f64, x: f64, sol: &RiccatiSolution) -> Result<f64> {
    let point = sol.interpolate(t)?;
    Ok(quadratic(point.p_plus, point.p_minus, x))
}

fn quadratic(p_plus: f64, p_minus: f64, x: f64) -> f64 {
    let pos = x.max(0.0);
    let neg = (-x).max(0.0);
    p_plus * pos * pos + p_minus * neg * neg
}

/// Minimal `E[(X_T - d)^2]` from initial wealth `x`.
pub fn lagrangian_value(x: f64, d: f64, sol: &RiccatiSolution) -> f64 {
    quadratic(sol.p_plus_0(), sol.p_minus_0(), x - d)
}

/// The dual objective `d -> V(0, x; d) - (d - z)^2`.
pub fn dual_objective(x0: f64, z: f64, d: f64, sol: &RiccatiSolution) -> f64 {
    lagrangian_value(x0, d, sol) - (d - z) * (d - z)
}

fn vertex(x0: f64, z: f64, p_minus_0: f64) -> Result<f64> {
    if !(p_minus_0 < 1.0) {
        return Err(Error::Invariant(format!(
            "P-(0) = {p_minus_0} is not below 1; the ODE solution cannot support a target above x0"
        )));
    }
    Ok((z - x0 * p_minus_0) / (1.0 - p_minus_0))
}

/// `d* = (z - x0 P-(0)) / (1 - P-(0))`, checked to be a local maximizer of
/// the dual objective.
pub fn d_star(x0: f64, z: f64, sol: &RiccatiSolution) -> Result<f64> {
    if z < x0 {
        return Err(Error::Domain(format!("target {z} is below initial wealth {x0}")));
    }
    let d = vertex(x0, z, sol.p_minus_0())?;
    let scale = 1e-3 * (1.0 + (d - x0).abs());
    let best = dual_objective(x0, z, d, sol);
    for probe in [d - scale, d + scale] {
        let value = dual_objective(x0, z, probe, sol);
        if value > best + 1e-12 * (1.0 + best.abs()) {
            return Err(Error::Invariant(format!(
                "dual objective at {probe} ({value}) exceeds its value at d* = {d} ({best})"
            )));
        }
    }
    Ok(d)
}

/// A mean-variance target together with the ODE solution that serves it.
#[derive(Debug, Clone)]
pub struct PolicySpec {
    x0: f64,
    z: f64,
    d_star: f64,
    solution: Arc<RiccatiSolution>,
}

impl PolicySpec {
    pub fn new(x0: f64, z: f64, solution: impl Into<Arc<RiccatiSolution>>) -> Result<Self> {
        let solution = solution.into();
        let d_star = d_star(x0, z, &solution)?;
        Ok(Self { x0, z, d_star, solution })
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn d_star(&self) -> f64 {
        self.d_star
    }

    pub fn solution(&self) -> &Arc<RiccatiSolution> {
        &self.solution
    }

    /// Optimal amounts held in each asset given the pre-jump wealth.
    pub fn feedback(&self, t: f64, x_pre_jump: f64) -> Result<Vec<f64>> {
        feedback_about(&self.solution, self.d_star, t, x_pre_jump)
    }

    /// Variance of terminal wealth under the optimal policy.
    pub fn variance(&self) -> f64 {
        frontier_variance(self.solution.p_minus_0(), self.x0, self.z)
    }
}

/// `vhat+(t) (x - d)^+ + vhat-(t) (x - d)^-` for an arbitrary vertex `d`.
pub fn feedback_about(sol: &RiccatiSolution, d: f64, t: f64, x_pre_jump: f64) -> Result<Vec<f64>> {
    let point = sol.interpolate(t)?;
    let pos = (x_pre_jump - d).max(0.0);
    let neg = (d - x_pre_jump).max(0.0);
    Ok(point
        .vhat_plus
        .iter()
        .zip(&point.vhat_minus)
        .map(|(up, down)| up * pos + down * neg)
        .collect())
}

fn frontier_variance(p_minus_0: f64, x0: f64, z: f64) -> f64 {
    p_minus_0 / (1.0 - p_minus_0) * (z - x0) * (z - x0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierPoint {
    pub z: f64,
    pub variance: f64,
    pub std: f64,
}

/// Efficient frontier at the requested target means.
pub fn frontier(x0: f64, z_values: &[f64], sol: &RiccatiSolution) -> Result<Vec<FrontierPoint>> {
    let p = sol.p_minus_0();
    if !(p < 1.0) {
        return Err(Error::Invariant(format!("P-(0) = {p} is not below 1")));
    }
    z_values
        .iter()
        .map(|&z| {
            if z < x0 {
                return Err(Error::Domain(format!("target {z} is below initial wealth {x0}")));
            }
            let variance = frontier_variance(p, x0, z);
            Ok(FrontierPoint { z, variance, std: variance.sqrt() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::DEFAULT_TOL;
    use crate::market::{JumpMark, JumpSource, MarketModel};
    use crate::riccati::solve;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn one_asset(mu: f64, sigma: f64, marks: &[(f64, f64)]) -> MarketModel {
        let sources = if marks.is_empty() {
            vec![]
        } else {
            vec![JumpSource::new(marks.iter().map(|&(b, w)| JumpMark::new(vec![b], w)).collect())]
        };
        MarketModel::time_invariant(1.0, vec![mu], vec![vec![sigma]], sources).unwrap()
    }

    fn coupled() -> Arc<RiccatiSolution> {
        static SOL: OnceLock<Arc<RiccatiSolution>> = OnceLock::new();
        SOL.get_or_init(|| Arc::new(solve(one_asset(0.15, 0.25, &[(0.4, 0.5), (-0.4, 0.5)]), 400, DEFAULT_TOL).unwrap()))
            .clone()
    }

    fn negative_jump() -> Arc<RiccatiSolution> {
        static SOL: OnceLock<Arc<RiccatiSolution>> = OnceLock::new();
        SOL.get_or_init(|| Arc::new(solve(one_asset(0.2, 0.3, &[(-0.5, 1.0)]), 2000, DEFAULT_TOL).unwrap()))
            .clone()
    }

    #[test]
    fn value_function_basics() {
        let sol = coupled();
        for &t in &[0.0, 0.3, 0.77, 1.0] {
            assert_eq!(value_function(t, 0.0, &sol).unwrap(), 0.0);
        }
        assert_eq!(value_function(1.0, -3.0, &sol).unwrap(), 9.0);
        assert_eq!(value_function(1.0, 2.0, &sol).unwrap(), 4.0);
        let base = value_function(0.25, -1.3, &sol).unwrap();
        assert_relative_eq!(value_function(0.25, -2.6, &sol).unwrap(), 4.0 * base, epsilon = 1e-14);
    }

    #[test]
    fn lagrangian_examples() {
        let sol = coupled();
        assert_eq!(lagrangian_value(1.5, 1.5, &sol), 0.0);
        assert_eq!(lagrangian_value(0.0, 1.0, &sol), sol.p_minus_0());
        assert_eq!(lagrangian_value(3.0, 1.0, &sol), 4.0 * sol.p_plus_0());
    }

    #[test]
    fn d_star_examples() {
        let sol = coupled();
        assert_relative_eq!(d_star(2.0, 2.0, &sol).unwrap(), 2.0, epsilon = 1e-14);
        assert_relative_eq!(vertex(0.0, 1.0, 0.5).unwrap(), 2.0);
        assert!(matches!(vertex(0.0, 1.0, 1.0), Err(Error::Invariant(_))));
        assert!(matches!(d_star(1.0, 0.5, &sol), Err(Error::Domain(_))));
    }

    #[test]
    fn d_star_is_grid_argmax_of_dual() {
        let sol = coupled();
        let (x0, z) = (0.0, 1.0);
        let d = d_star(x0, z, &sol).unwrap();
        let span = 10.0 * (z - x0);
        let n = 200_000;
        let h = span / n as f64;
        let (best_d, _) = (0..=n)
            .map(|i| z + i as f64 * h)
            .map(|dd| (dd, dual_objective(x0, z, dd, &sol)))
            .fold((f64::NAN, f64::NEG_INFINITY), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        assert!((best_d - d).abs() <= h, "grid argmax {best_d} vs d* {d}");
        // the maximum equals the frontier variance
        let var = frontier(x0, &[z], &sol).unwrap()[0].variance;
        assert_relative_eq!(dual_objective(x0, z, d, &sol), var, epsilon = 1e-12);
    }

    #[test]
    fn feedback_examples() {
        let sol = negative_jump();
        let policy = PolicySpec::new(0.0, 1.0, sol.clone()).unwrap();
        let d = policy.d_star();
        assert_eq!(policy.feedback(0.4, d).unwrap(), vec![0.0]);
        let x = d - 2.5;
        let f = policy.feedback(0.0, x).unwrap();
        assert_relative_eq!(f[0], 0.2 / 0.34 * 2.5, epsilon = 1e-8);
        // above the vertex nothing is held in this market
        assert_eq!(policy.feedback(0.5, d + 1.0).unwrap(), vec![0.0]);

        let idle = PolicySpec::new(1.0, 1.0, sol).unwrap();
        assert_relative_eq!(idle.d_star(), 1.0, epsilon = 1e-14);
        assert!(idle.feedback(0.0, 1.0).unwrap().iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn frontier_examples() {
        let sol = coupled();
        let pts = frontier(1.0, &[1.0, 1.5, 2.0, 4.0, 11.0], &sol).unwrap();
        assert_eq!(pts[0].variance, 0.0);
        let slope = pts[1].std / 0.5;
        for p in &pts[1..] {
            assert!((p.std / (p.z - 1.0) - slope).abs() <= 1e-12);
        }
        assert_relative_eq!(frontier_variance(0.5, 0.0, 1.0), 1.0);
        // second differences of the variance are constant
        let zs: Vec<f64> = (0..10).map(|i| 1.0 + 0.25 * i as f64).collect();
        let v: Vec<f64> = frontier(1.0, &zs, &sol).unwrap().iter().map(|p| p.variance).collect();
        let second: Vec<f64> = v.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).collect();
        for s in &second {
            assert!((s - second[0]).abs() <= 1e-12 * (1.0 + second[0].abs()));
            assert!(*s > 0.0);
        }
        assert!(v.windows(2).all(|w| w[1] > w[0]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn feedback_never_shorts(t in 0.0f64..=1.0, x in -50.0f64..50.0) {
            let policy = PolicySpec::new(0.0, 1.0, coupled()).unwrap();
            prop_assert!(policy.feedback(t, x).unwrap().iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn value_function_convex_on_half_lines(t in 0.0f64..=1.0, a in -5.0f64..5.0, b in -5.0f64..5.0, theta in 0.0f64..1.0) {
            prop_assume!(a * b >= 0.0);
            let sol = coupled();
            let mid = value_function(t, theta * a + (1.0 - theta) * b, &sol).unwrap();
            let chord = theta * value_function(t, a, &sol).unwrap() + (1.0 - theta) * value_function(t, b, &sol).unwrap();
            prop_assert!(mid <= chord + 1e-12);
        }
    }
}
