//! Mean-variance portfolio selection under a no-shorting constraint in a
//! jump-diffusion market.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`market`] describes the market and checks its standing assumptions.
//! 2. [`hamiltonian`] minimizes the two constrained Hamiltonians over the
//!    nonnegative orthant.
//! 3. [`riccati`] integrates the coupled backward ODE for `(P+, P-)`.
//! 4. [`policy`] turns the ODE solution into the value function, the
//!    Lagrange vertex `d*`, the feedback portfolio and the efficient
//!    frontier.
//!
//! [`sim`] verifies the result by Monte Carlo simulation of the wealth
//! equation and [`closed_forms`] holds the one-asset special cases used as
//! independent oracles. [`oracle`] bundles the cross-checks run by the
//! `oracle-check` command.

pub mod closed_forms;
pub mod config;
pub mod error;
pub mod hamiltonian;
pub mod market;
pub mod oracle;
pub mod policy;
pub mod riccati;
pub mod sim;

pub use error::{Error, Result};
pub use hamiltonian::{HamiltonianResult, Side};
pub use market::{JumpMark, JumpSource, KnotCoefficients, MarketModel, ValidationReport};
pub use policy::PolicySpec;
pub use riccati::{RiccatiPoint, RiccatiSolution, SolveOptions};
pub use sim::{SimConfig, SimulationStats};
