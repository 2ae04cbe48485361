//! Jump-diffusion market with piecewise-constant coefficients.
//!
//! Coefficients are given at the knots `0 = t_0 < ... < t_K = T`. Row `k`
//! is in force on `[t_k, t_{k+1})`; the final row only describes the instant
//! `T` itself. Each Poisson source carries a finite list of marks, so every
//! integral against the jump measure is a finite weighted sum.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest eigenvalue of `Sigma_t` accepted as uniformly positive definite.
pub const MIN_EIGENVALUE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpMark {
    /// Relative jump size of each asset when this mark fires.
    pub beta: Vec<f64>,
    /// Intensity per unit time.
    pub weight: f64,
}

impl JumpMark {
    pub fn new(beta: Vec<f64>, weight: f64) -> Self {
        Self { beta, weight }
    }
}

/// One Poisson source with a finite mark measure.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JumpSource {
    pub marks: Vec<JumpMark>,
}

impl JumpSource {
    pub fn new(marks: Vec<JumpMark>) -> Self {
        Self { marks }
    }

    /// Total mass of the mark measure.
    pub fn total_weight(&self) -> f64 {
        self.marks.iter().map(|mark| mark.weight).sum()
    }
}

/// Raw coefficients at one knot.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotCoefficients {
    pub mu: Vec<f64>,
    /// `m` rows of length `n`.
    pub sigma: Vec<Vec<f64>>,
    /// One entry per Poisson source.
    pub sources: Vec<JumpSource>,
}

#[derive(Debug, Clone)]
pub(crate) struct FlatMark {
    pub beta: Vec<f64>,
    pub weight: f64,
}

/// Coefficients at one knot together with the quantities every consumer
/// needs repeatedly.
#[derive(Debug, Clone)]
pub struct Knot {
    raw: KnotCoefficients,
    /// `sigma sigma^T`, row-major `m x m`.
    pub(crate) diffusion_cov: Vec<f64>,
    /// All marks of all sources.
    pub(crate) marks: Vec<FlatMark>,
    /// `sum_j sum_k weight beta`.
    pub(crate) compensator: Vec<f64>,
    pub(crate) total_rate: f64,
    big_sigma: DMatrix<f64>,
    min_eigenvalue: f64,
    /// `Sigma^{-1} mu` when `Sigma` is positive definite.
    pub(crate) sigma_inv_mu: Option<Vec<f64>>,
}

impl Knot {
    fn build(raw: KnotCoefficients) -> Self {
        let m = raw.mu.len();
        let n = raw.sigma.first().map_or(0, Vec::len);
        let sigma = DMatrix::from_fn(m, n, |i, j| raw.sigma[i][j]);
        let sst = &sigma * sigma.transpose();
        let mut big_sigma = sst.clone();
        let mut compensator = vec![0.0; m];
        let mut marks = Vec::new();
        let mut total_rate = 0.0;
        for source in &raw.sources {
            for mark in &source.marks {
                let beta = DVector::from_column_slice(&mark.beta);
                big_sigma += mark.weight * &beta * beta.transpose();
                for (c, b) in compensator.iter_mut().zip(&mark.beta) {
                    *c += mark.weight * b;
                }
                total_rate += mark.weight;
                marks.push(FlatMark {
                    beta: mark.beta.clone(),
                    weight: mark.weight,
                });
            }
        }
        let min_eigenvalue = if m == 0 {
            0.0
        } else {
            big_sigma
                .clone()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min)
        };
        let sigma_inv_mu = big_sigma
            .clone()
            .cholesky()
            .map(|chol| chol.solve(&DVector::from_column_slice(&raw.mu)).as_slice().to_vec());
        Self {
            diffusion_cov: sst.transpose().as_slice().to_vec(),
            marks,
            compensator,
            total_rate,
            big_sigma,
            min_eigenvalue,
            sigma_inv_mu,
            raw,
        }
    }

    pub fn mu(&self) -> &[f64] {
        &self.raw.mu
    }

    pub fn sigma(&self) -> &[Vec<f64>] {
        &self.raw.sigma
    }

    pub fn sources(&self) -> &[JumpSource] {
        &self.raw.sources
    }

    pub fn coefficients(&self) -> &KnotCoefficients {
        &self.raw
    }

    /// `Sigma_t = sigma sigma^T + sum_j sum_k weight beta beta^T`.
    pub fn big_sigma(&self) -> &DMatrix<f64> {
        &self.big_sigma
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    /// Total jump intensity over all sources.
    pub fn total_rate(&self) -> f64 {
        self.total_rate
    }

    pub fn has_jumps(&self) -> bool {
        self.marks.iter().any(|mark| mark.weight > 0.0)
    }

    /// `mu^T Sigma^{-1} mu`.
    pub fn risk_premium(&self) -> Option<f64> {
        self.sigma_inv_mu
            .as_ref()
            .map(|x| x.iter().zip(&self.raw.mu).map(|(a, b)| a * b).sum())
    }
}

#[derive(Debug, Clone)]
pub struct MarketModel {
    horizon: f64,
    grid: Vec<f64>,
    knots: Vec<Knot>,
    m: usize,
    n: usize,
    ell: usize,
}

impl MarketModel {
    /// Builds a model after checking its structure. Economic assumptions
    /// are not checked here; see [`MarketModel::validate`].
    pub fn new(horizon: f64, grid: Vec<f64>, knots: Vec<KnotCoefficients>) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Structure(format!("horizon must be positive, got {horizon}")));
        }
        if grid.len() < 2 {
            return Err(Error::Structure("time grid needs at least two knots".into()));
        }
        if grid[0] != 0.0 {
            return Err(Error::Structure(format!("time grid must start at 0, got {}", grid[0])));
        }
        let last = *grid.last().unwrap();
        if (last - horizon).abs() > 1e-12 * horizon {
            return Err(Error::Structure(format!(
                "time grid must end at the horizon {horizon}, got {last}"
            )));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::Structure("time grid must be strictly increasing".into()));
        }
        if knots.len() != grid.len() {
            return Err(Error::Structure(format!(
                "{} coefficient rows for {} knots",
                knots.len(),
                grid.len()
            )));
        }
        let m = knots[0].mu.len();
        let n = knots[0].sigma.first().map_or(0, Vec::len);
        let ell = knots[0].sources.len();
        if m == 0 || n == 0 {
            return Err(Error::Structure("need at least one asset and one Brownian factor".into()));
        }
        for (k, knot) in knots.iter().enumerate() {
            if knot.mu.len() != m {
                return Err(Error::Structure(format!("knot {k}: mu has length {}, expected {m}", knot.mu.len())));
            }
            if knot.sigma.len() != m || knot.sigma.iter().any(|row| row.len() != n) {
                return Err(Error::Structure(format!("knot {k}: sigma must be {m} x {n}")));
            }
            if knot.sources.len() != ell {
                return Err(Error::Structure(format!(
                    "knot {k}: {} jump sources, expected {ell}",
                    knot.sources.len()
                )));
            }
            for source in &knot.sources {
                for mark in &source.marks {
                    if mark.beta.len() != m {
                        return Err(Error::Structure(format!(
                            "knot {k}: jump mark has {} components, expected {m}",
                            mark.beta.len()
                        )));
                    }
                    if !mark.weight.is_finite() || mark.beta.iter().any(|b| !b.is_finite()) {
                        return Err(Error::Structure(format!("knot {k}: non-finite jump mark")));
                    }
                }
            }
            if knot.mu.iter().chain(knot.sigma.iter().flatten()).any(|x| !x.is_finite()) {
                return Err(Error::Structure(format!("knot {k}: non-finite coefficient")));
            }
        }
        let mut grid = grid;
        *grid.last_mut().unwrap() = horizon;
        Ok(Self {
            horizon,
            grid,
            knots: knots.into_iter().map(Knot::build).collect(),
            m,
            n,
            ell,
        })
    }

    /// Time-invariant model on the two-knot grid `{0, T}`.
    pub fn time_invariant(
        horizon: f64,
        mu: Vec<f64>,
        sigma: Vec<Vec<f64>>,
        sources: Vec<JumpSource>,
    ) -> Result<Self> {
        let knot = KnotCoefficients { mu, sigma, sources };
        Self::new(horizon, vec![0.0, horizon], vec![knot.clone(), knot])
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }

    pub fn assets(&self) -> usize {
        self.m
    }

    pub fn factors(&self) -> usize {
        self.n
    }

    pub fn sources(&self) -> usize {
        self.ell
    }

    pub fn has_jumps(&self) -> bool {
        self.knots.iter().any(Knot::has_jumps)
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if t.is_finite() && (0.0..=self.horizon).contains(&t) {
            Ok(())
        } else {
            Err(Error::TimeOutOfRange { t, horizon: self.horizon })
        }
    }

    /// Index of the row in force at `t` (right-continuous; `T` maps to the
    /// last row).
    pub fn knot_index_at(&self, t: f64) -> usize {
        self.grid.partition_point(|&g| g <= t).saturating_sub(1)
    }

    pub fn knot_at(&self, t: f64) -> Result<&Knot> {
        self.check_time(t)?;
        Ok(&self.knots[self.knot_index_at(t)])
    }

    /// Row in force on the open interval `(t0, t1)`, judged at its midpoint.
    pub(crate) fn knot_for_interval(&self, t0: f64, t1: f64) -> &Knot {
        let mid = 0.5 * (t0 + t1);
        let idx = self.knot_index_at(mid).min(self.grid.len() - 2);
        &self.knots[idx]
    }

    /// First knot strictly after `t`, or the horizon.
    pub(crate) fn next_knot_after(&self, t: f64) -> f64 {
        let idx = self.grid.partition_point(|&g| g <= t);
        self.grid.get(idx).copied().unwrap_or(self.horizon)
    }

    pub fn big_sigma(&self, t: f64) -> Result<DMatrix<f64>> {
        Ok(self.knot_at(t)?.big_sigma().clone())
    }

    /// `int_from^T mu^T Sigma^{-1} mu ds`, exact for piecewise-constant
    /// coefficients.
    pub fn risk_premium_integral(&self, from: f64) -> Result<f64> {
        self.check_time(from)?;
        let mut total = 0.0;
        for k in 0..self.grid.len() - 1 {
            let lo = self.grid[k].max(from);
            let hi = self.grid[k + 1];
            if hi <= lo {
                continue;
            }
            let premium = self.knots[k].risk_premium().ok_or_else(|| {
                Error::Numeric(format!("Sigma is singular on [{}, {}]", self.grid[k], hi))
            })?;
            total += premium * (hi - lo);
        }
        Ok(total)
    }

    /// A lower bound strictly inside `(0, exp(-int_0^T mu^T Sigma^{-1} mu))`,
    /// taken as half the upper end.
    pub fn alpha_bound(&self) -> Result<f64> {
        Ok(0.5 * (-self.risk_premium_integral(0.0)?).exp())
    }

    /// `sum_i int_0^T mu_i dt`.
    pub fn feasibility_integral(&self) -> f64 {
        (0..self.grid.len() - 1)
            .map(|k| {
                let dt = self.grid[k + 1] - self.grid[k];
                self.knots[k].mu().iter().sum::<f64>() * dt
            })
            .sum()
    }

    pub fn validate(&self) -> ValidationReport {
        let mut checks = Vec::new();

        let min_beta = self
            .knots
            .iter()
            .flat_map(|k| k.marks.iter().flat_map(|m| m.beta.iter().copied()))
            .fold(f64::INFINITY, f64::min);
        checks.push(Check {
            name: "jump sizes > -1",
            passed: min_beta > -1.0,
            witness: min_beta,
            detail: if min_beta.is_finite() {
                format!("smallest jump component {min_beta}")
            } else {
                "no jump marks".into()
            },
        });

        let min_weight = self
            .knots
            .iter()
            .flat_map(|k| k.marks.iter().map(|m| m.weight))
            .fold(f64::INFINITY, f64::min);
        checks.push(Check {
            name: "jump weights >= 0",
            passed: !(min_weight < 0.0),
            witness: min_weight,
            detail: if min_weight.is_finite() {
                format!("smallest weight {min_weight}")
            } else {
                "no jump marks".into()
            },
        });

        let min_eigenvalues: Vec<f64> = self.knots.iter().map(Knot::min_eigenvalue).collect();
        let delta = min_eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        checks.push(Check {
            name: "Sigma_t uniformly positive definite",
            passed: delta > MIN_EIGENVALUE,
            witness: delta,
            detail: format!("smallest eigenvalue over knots {delta}"),
        });

        let feasibility = self.feasibility_integral();
        checks.push(Check {
            name: "feasibility: sum_i int mu_i dt > 0",
            passed: feasibility > 0.0,
            witness: feasibility,
            detail: format!("integral {feasibility}"),
        });

        let max_abs = self
            .knots
            .iter()
            .flat_map(|k| {
                k.mu()
                    .iter()
                    .chain(k.sigma().iter().flatten())
                    .chain(k.marks.iter().flat_map(|m| m.beta.iter().chain(std::iter::once(&m.weight))))
                    .map(|x| x.abs())
                    .collect::<Vec<_>>()
            })
            .fold(0.0, f64::max);
        checks.push(Check {
            name: "coefficients bounded",
            passed: max_abs.is_finite(),
            witness: max_abs,
            detail: format!("largest magnitude {max_abs}"),
        });

        ValidationReport {
            valid: checks.iter().all(|c| c.passed),
            checks,
            min_eigenvalues,
            delta_witness: delta,
            feasibility_integral: feasibility,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub witness: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub valid: bool,
    pub checks: Vec<Check>,
    /// Smallest eigenvalue of `Sigma_t` at each knot.
    pub min_eigenvalues: Vec<f64>,
    pub delta_witness: f64,
    pub feasibility_integral: f64,
}

impl ValidationReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for check in &self.checks {
            writeln!(
                f,
                "{:<4} {:<40} {}",
                if check.passed { "ok" } else { "FAIL" },
                check.name,
                check.detail
            )?;
        }
        for (k, eig) in self.min_eigenvalues.iter().enumerate() {
            writeln!(f, "     knot {k}: min eigenvalue of Sigma {eig:.16e}")?;
        }
        write!(f, "model {}", if self.valid { "valid" } else { "INVALID" })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn one_asset(mu: f64, sigma: f64, marks: &[(f64, f64)]) -> MarketModel {
        let sources = if marks.is_empty() {
            vec![]
        } else {
            vec![JumpSource::new(marks.iter().map(|&(b, w)| JumpMark::new(vec![b], w)).collect())]
        };
        MarketModel::time_invariant(1.0, vec![mu], vec![vec![sigma]], sources).unwrap()
    }

    #[test]
    fn validate_reports_witnesses() {
        let model = one_asset(0.2, 0.3, &[(0.4, 1.0)]);
        let report = model.validate();
        assert!(report.valid, "{report}");
        assert_relative_eq!(report.delta_witness, 0.25, epsilon = 1e-14);
        assert_relative_eq!(report.feasibility_integral, 0.2, epsilon = 1e-14);
    }

    #[test]
    fn zero_drift_is_infeasible() {
        let report = one_asset(0.0, 0.3, &[(0.4, 1.0)]).validate();
        assert!(!report.valid);
        let check = report.check("feasibility: sum_i int mu_i dt > 0").unwrap();
        assert!(!check.passed);
        assert_eq!(check.witness, 0.0);
    }

    #[test]
    fn jump_of_minus_one_rejected() {
        let report = one_asset(0.2, 0.3, &[(-1.0, 1.0)]).validate();
        assert!(!report.valid);
        assert!(!report.check("jump sizes > -1").unwrap().passed);
    }

    #[test]
    fn big_sigma_examples() {
        let model = one_asset(0.2, 0.3, &[(-0.5, 1.0)]);
        assert_relative_eq!(model.big_sigma(0.5).unwrap()[(0, 0)], 0.34, epsilon = 1e-15);
        let model = one_asset(0.2, 0.3, &[]);
        assert_relative_eq!(model.big_sigma(0.0).unwrap()[(0, 0)], 0.09, epsilon = 1e-15);
        let model = MarketModel::time_invariant(
            1.0,
            vec![0.1, 0.1],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![],
        )
        .unwrap();
        assert_eq!(model.big_sigma(1.0).unwrap(), DMatrix::identity(2, 2));
        assert!(matches!(model.big_sigma(1.5), Err(Error::TimeOutOfRange { .. })));
        assert!(matches!(model.big_sigma(-0.1), Err(Error::TimeOutOfRange { .. })));
    }

    #[test]
    fn alpha_bound_examples() {
        let model = one_asset(0.2, 0.3, &[]);
        let expected = 0.5 * (-0.04f64 / 0.09).exp();
        assert_relative_eq!(model.alpha_bound().unwrap(), expected, epsilon = 1e-15);
        assert_relative_eq!(expected, 0.320590, epsilon = 1e-6);

        let model = one_asset(0.0, 0.3, &[]);
        assert_eq!(model.alpha_bound().unwrap(), 0.5);

        // two segments each contributing 0.1 to the integral
        let sigma = 0.2f64;
        let mu = (0.1f64 * sigma * sigma / 0.5).sqrt();
        let knot = KnotCoefficients { mu: vec![mu], sigma: vec![vec![sigma]], sources: vec![] };
        let model = MarketModel::new(1.0, vec![0.0, 0.5, 1.0], vec![knot.clone(), knot.clone(), knot]).unwrap();
        assert_relative_eq!(model.alpha_bound().unwrap(), 0.5 * (-0.2f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn structural_errors() {
        let knot = KnotCoefficients { mu: vec![0.1], sigma: vec![vec![0.2]], sources: vec![] };
        let bad_mu = KnotCoefficients { mu: vec![0.1, 0.2], ..knot.clone() };
        assert!(matches!(
            MarketModel::new(1.0, vec![0.0, 1.0], vec![knot.clone(), bad_mu]),
            Err(Error::Structure(_))
        ));
        assert!(matches!(
            MarketModel::new(1.0, vec![0.0, 1.0], vec![knot.clone()]),
            Err(Error::Structure(_))
        ));
        assert!(matches!(
            MarketModel::new(1.0, vec![0.0, 0.6, 0.5, 1.0], vec![knot.clone(); 4]),
            Err(Error::Structure(_))
        ));
        let bad_beta = KnotCoefficients {
            sources: vec![JumpSource::new(vec![JumpMark::new(vec![0.1, 0.1], 1.0)])],
            ..knot.clone()
        };
        assert!(matches!(
            MarketModel::new(1.0, vec![0.0, 1.0], vec![bad_beta.clone(), bad_beta]),
            Err(Error::Structure(_))
        ));
    }

    #[test]
    fn knot_lookup_is_right_continuous() {
        let knot = KnotCoefficients { mu: vec![0.1], sigma: vec![vec![0.2]], sources: vec![] };
        let model = MarketModel::new(2.0, vec![0.0, 0.5, 2.0], vec![knot.clone(); 3]).unwrap();
        assert_eq!(model.knot_index_at(0.0), 0);
        assert_eq!(model.knot_index_at(0.49), 0);
        assert_eq!(model.knot_index_at(0.5), 1);
        assert_eq!(model.knot_index_at(2.0), 2);
        assert_eq!(model.next_knot_after(0.5), 2.0);
        assert_eq!(model.next_knot_after(0.2), 0.5);
    }

    #[test]
    fn validate_is_deterministic() {
        let model = one_asset(0.15, 0.25, &[(0.4, 0.5), (-0.4, 0.5)]);
        assert_eq!(model.validate(), model.validate());
    }
}
