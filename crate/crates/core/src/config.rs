//! JSON description of a market, plus optional run parameters.
//!
//! ```json
//! {
//!   "horizon": 1.0,
//!   "grid": [0.0, 0.5, 1.0],
//!   "assets": [
//!     { "mu": 0.2, "sigma": [0.3] },
//!     { "mu": [0.1, 0.12, 0.12], "sigma": [[0.1, 0.2], [0.1, 0.25], [0.1, 0.25]] }
//!   ],
//!   "jump_sources": [
//!     { "marks": [ { "beta": [0.4, -0.1], "weight": 0.5 } ] },
//!     { "per_knot": [ { "marks": [] }, { "marks": [ { "beta": [0.1, 0.0], "weight": 1.0 } ] }, { "marks": [] } ] }
//!   ],
//!   "run": { "steps": 2000, "x0": 0.0, "z": 1.0 }
//! }
//! ```
//!
//! `grid` defaults to `[0, horizon]`. Each coefficient is either constant
//! or given once per knot. Row `k` holds on `[t_k, t_{k+1})`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{JumpSource, KnotCoefficients, MarketModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerKnot<T> {
    Constant(T),
    Varying(Vec<T>),
}

impl<T: Clone> PerKnot<T> {
    fn at(&self, k: usize, knots: usize, what: &str) -> Result<T> {
        match self {
            PerKnot::Constant(v) => Ok(v.clone()),
            PerKnot::Varying(rows) if rows.len() == knots => Ok(rows[k].clone()),
            PerKnot::Varying(rows) => Err(Error::Config(format!(
                "{what}: {} rows given for {knots} knots",
                rows.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetConfig {
    pub mu: PerKnot<f64>,
    /// Row of loadings on the Brownian factors.
    pub sigma: PerKnot<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SourceConfig {
    Constant(JumpSource),
    Varying { per_knot: Vec<JumpSource> },
}

/// Run parameters that command-line flags may override.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunDefaults {
    pub steps: Option<usize>,
    pub n_paths: Option<usize>,
    pub dt: Option<f64>,
    pub seed: Option<u64>,
    pub x0: Option<f64>,
    pub z: Option<f64>,
    pub d: Option<f64>,
    pub threads: Option<usize>,
    pub record_paths: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub horizon: f64,
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
    pub assets: Vec<AssetConfig>,
    #[serde(default)]
    pub jump_sources: Vec<SourceConfig>,
    #[serde(default)]
    pub run: RunDefaults,
}

impl MarketConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_model(&self) -> Result<MarketModel> {
        if self.assets.is_empty() {
            return Err(Error::Config("no assets".into()));
        }
        let grid = self.grid.clone().unwrap_or_else(|| vec![0.0, self.horizon]);
        let count = grid.len();
        let mut knots = Vec::with_capacity(count);
        for k in 0..count {
            let mut mu = Vec::with_capacity(self.assets.len());
            let mut sigma = Vec::with_capacity(self.assets.len());
            for (i, asset) in self.assets.iter().enumerate() {
                mu.push(asset.mu.at(k, count, &format!("asset {i} mu"))?);
                sigma.push(asset.sigma.at(k, count, &format!("asset {i} sigma"))?);
            }
            let sources = self
                .jump_sources
                .iter()
                .enumerate()
                .map(|(j, source)| match source {
                    SourceConfig::Constant(s) => Ok(s.clone()),
                    SourceConfig::Varying { per_knot } if per_knot.len() == count => Ok(per_knot[k].clone()),
                    SourceConfig::Varying { per_knot } => Err(Error::Config(format!(
                        "jump source {j}: {} rows given for {count} knots",
                        per_knot.len()
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            knots.push(KnotCoefficients { mu, sigma, sources });
        }
        MarketModel::new(self.horizon, grid, knots)
    }
}

/// Reads and builds the market in one go.
pub fn load_model(path: impl AsRef<Path>) -> Result<(MarketModel, RunDefaults)> {
    let config = MarketConfig::from_path(path)?;
    Ok((config.to_model()?, config.run))
}
