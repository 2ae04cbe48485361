//! Python bindings. Built as the `mvjump` extension module.

use std::collections::HashMap;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mvjump::config::MarketConfig;
use mvjump::hamiltonian::{self, Side, DEFAULT_TOL};
use mvjump::riccati::DEFAULT_STEPS;
use mvjump::sim::{simulate_policy, verify_value as run_verify_value};
use mvjump::{Error, JumpMark, JumpSource, SimConfig};

fn to_py(e: Error) -> PyErr {
    if e.is_numeric() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn side_from(name: &str) -> PyResult<Side> {
    match name {
        "plus" | "+" => Ok(Side::Plus),
        "minus" | "-" => Ok(Side::Minus),
        other => Err(PyValueError::new_err(format!("side must be 'plus' or 'minus', got {other:?}"))),
    }
}

#[pyclass(name = "MarketModel", module = "mvjump", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyMarketModel {
    inner: Arc<mvjump::MarketModel>,
}

#[pymethods]
impl PyMarketModel {
    /// Time-invariant market. `sources` is a list of jump sources, each a
    /// list of `(beta, weight)` pairs with `beta` one entry per asset.
    #[staticmethod]
    #[pyo3(signature = (horizon, mu, sigma, sources = Vec::new()))]
    fn time_invariant(
        horizon: f64,
        mu: Vec<f64>,
        sigma: Vec<Vec<f64>>,
        sources: Vec<Vec<(Vec<f64>, f64)>>,
    ) -> PyResult<Self> {
        let sources = sources
            .into_iter()
            .map(|marks| JumpSource::new(marks.into_iter().map(|(b, w)| JumpMark::new(b, w)).collect()))
            .collect();
        let model = mvjump::MarketModel::time_invariant(horizon, mu, sigma, sources).map_err(to_py)?;
        Ok(Self { inner: Arc::new(model) })
    }

    /// Market from the JSON configuration format used by the CLI.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let model = MarketConfig::from_json(text).and_then(|c| c.to_model()).map_err(to_py)?;
        Ok(Self { inner: Arc::new(model) })
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon()
    }

    #[getter]
    fn assets(&self) -> usize {
        self.inner.assets()
    }

    #[getter]
    fn grid(&self) -> Vec<f64> {
        self.inner.grid().to_vec()
    }

    fn alpha_bound(&self) -> PyResult<f64> {
        self.inner.alpha_bound().map_err(to_py)
    }

    /// `(valid, [(name, passed, witness, detail), ...])`.
    fn validate(&self) -> (bool, Vec<(String, bool, f64, String)>) {
        let report = self.inner.validate();
        let checks = report
            .checks
            .iter()
            .map(|c| (c.name.to_string(), c.passed, c.witness, c.detail.clone()))
            .collect();
        (report.valid, checks)
    }

    /// Minimum of the plus or minus Hamiltonian: `(value, argmin)`.
    #[pyo3(signature = (side, t, p_plus, p_minus, tol = DEFAULT_TOL))]
    fn minimize(&self, side: &str, t: f64, p_plus: f64, p_minus: f64, tol: f64) -> PyResult<(f64, Vec<f64>)> {
        let r = hamiltonian::minimize(side_from(side)?, &self.inner, t, p_plus, p_minus, tol).map_err(to_py)?;
        Ok((r.value, r.argmin))
    }

    fn __repr__(&self) -> String {
        format!(
            "MarketModel(horizon={}, assets={}, knots={})",
            self.inner.horizon(),
            self.inner.assets(),
            self.inner.grid().len()
        )
    }
}

#[pyclass(name = "RiccatiSolution", module = "mvjump", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyRiccatiSolution {
    inner: Arc<mvjump::RiccatiSolution>,
}

#[pymethods]
impl PyRiccatiSolution {
    #[getter]
    fn grid(&self) -> Vec<f64> {
        self.inner.grid().to_vec()
    }

    #[getter]
    fn p_plus(&self) -> Vec<f64> {
        self.inner.p_plus().to_vec()
    }

    #[getter]
    fn p_minus(&self) -> Vec<f64> {
        self.inner.p_minus().to_vec()
    }

    #[getter]
    fn vhat_plus(&self) -> Vec<Vec<f64>> {
        self.inner.vhat_plus().to_vec()
    }

    #[getter]
    fn vhat_minus(&self) -> Vec<Vec<f64>> {
        self.inner.vhat_minus().to_vec()
    }

    #[getter]
    fn p_plus_0(&self) -> f64 {
        self.inner.p_plus_0()
    }

    #[getter]
    fn p_minus_0(&self) -> f64 {
        self.inner.p_minus_0()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    /// `(p_plus, p_minus, vhat_plus, vhat_minus)` at time `t`.
    fn interpolate(&self, t: f64) -> PyResult<(f64, f64, Vec<f64>, Vec<f64>)> {
        let p = self.inner.interpolate(t).map_err(to_py)?;
        Ok((p.p_plus, p.p_minus, p.vhat_plus, p.vhat_minus))
    }

    fn value_function(&self, t: f64, x: f64) -> PyResult<f64> {
        mvjump::policy::value_function(t, x, &self.inner).map_err(to_py)
    }

    fn lagrangian_value(&self, x: f64, d: f64) -> f64 {
        mvjump::policy::lagrangian_value(x, d, &self.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.step_count() + 1
    }
}

#[pyclass(name = "PolicySpec", module = "mvjump", frozen)]
pub struct PyPolicySpec {
    inner: mvjump::PolicySpec,
}

#[pymethods]
impl PyPolicySpec {
    #[new]
    fn new(x0: f64, z: f64, solution: &PyRiccatiSolution) -> PyResult<Self> {
        let inner = mvjump::PolicySpec::new(x0, z, solution.inner.clone()).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn d_star(&self) -> f64 {
        self.inner.d_star()
    }

    #[getter]
    fn variance(&self) -> f64 {
        self.inner.variance()
    }

    /// Amounts held in each asset given the pre-jump wealth.
    fn feedback(&self, t: f64, x: f64) -> PyResult<Vec<f64>> {
        self.inner.feedback(t, x).map_err(to_py)
    }
}

#[pyfunction]
#[pyo3(signature = (model, steps = DEFAULT_STEPS, tol = DEFAULT_TOL))]
fn solve(py: Python<'_>, model: &PyMarketModel, steps: usize, tol: f64) -> PyResult<PyRiccatiSolution> {
    let model = model.inner.clone();
    let sol = py.detach(|| mvjump::riccati::solve(model, steps, tol)).map_err(to_py)?;
    Ok(PyRiccatiSolution { inner: Arc::new(sol) })
}

/// `[(z, variance, std), ...]`.
#[pyfunction]
fn frontier(x0: f64, z_values: Vec<f64>, solution: &PyRiccatiSolution) -> PyResult<Vec<(f64, f64, f64)>> {
    let points = mvjump::policy::frontier(x0, &z_values, &solution.inner).map_err(to_py)?;
    Ok(points.into_iter().map(|p| (p.z, p.variance, p.std)).collect())
}

fn stats_dict(stats: &mvjump::SimulationStats) -> HashMap<String, f64> {
    let mut out = HashMap::new();
    for (k, v) in [
        ("mean_XT", stats.mean.value),
        ("mean_XT_se", stats.mean.se),
        ("var_XT", stats.variance.value),
        ("var_XT_se", stats.variance.se),
        ("second_moment_about_d", stats.second_moment.value),
        ("second_moment_about_d_se", stats.second_moment.se),
        ("jump_count_mean", stats.jump_count_mean),
        ("vertex", stats.vertex),
        ("n_used", stats.n_used as f64),
        ("overflow_paths", stats.overflow_paths as f64),
        ("sign_changes", stats.signs.sign_changes as f64),
        ("sign_changes_at_jumps", stats.signs.sign_changes_at_jumps as f64),
    ] {
        out.insert(k.to_string(), v);
    }
    out
}

/// Monte Carlo statistics of the optimal policy.
#[pyfunction]
#[pyo3(signature = (policy, n_paths = 10_000, dt = 1e-3, seed = 0, threads = 1))]
fn simulate(
    py: Python<'_>,
    policy: &PyPolicySpec,
    n_paths: usize,
    dt: f64,
    seed: u64,
    threads: usize,
) -> PyResult<HashMap<String, f64>> {
    let cfg = SimConfig { n_paths, dt, seed, record_paths: 0, threads };
    let stats = py.detach(|| simulate_policy(&policy.inner, &cfg)).map_err(to_py)?;
    Ok(stats_dict(&stats))
}

/// `(estimate, se, target, z_score)` for `E[(X_T - d)^2]`.
#[pyfunction]
#[pyo3(signature = (solution, d, x0, n_paths = 10_000, dt = 1e-3, seed = 0, threads = 1))]
fn verify_value(
    py: Python<'_>,
    solution: &PyRiccatiSolution,
    d: f64,
    x0: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
    threads: usize,
) -> PyResult<(f64, f64, f64, f64)> {
    let cfg = SimConfig { n_paths, dt, seed, record_paths: 0, threads };
    let sol = solution.inner.clone();
    let check = py.detach(|| run_verify_value(&sol, d, x0, &cfg)).map_err(to_py)?;
    Ok((check.estimate.value, check.estimate.se, check.target, check.z_score))
}

/// Runs the closed-form suite: `(all_passed, table)`.
#[pyfunction]
#[pyo3(signature = (steps = DEFAULT_STEPS))]
fn oracle_check(py: Python<'_>, steps: usize) -> PyResult<(bool, String)> {
    let report = py.detach(|| mvjump::oracle::standard_suite(steps)).map_err(to_py)?;
    Ok((report.all_passed(), report.to_string()))
}

#[pymodule]
#[pyo3(name = "mvjump")]
fn mvjump_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMarketModel>()?;
    m.add_class::<PyRiccatiSolution>()?;
    m.add_class::<PyPolicySpec>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(frontier, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(verify_value, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_check, m)?)?;
    Ok(())
}
