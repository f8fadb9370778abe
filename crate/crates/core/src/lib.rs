//! Day-ahead offering for a virtual power plant that aggregates PV and
//! storage under budgeted PV uncertainty and Markov price scenarios.
//!
//! The pipeline: estimate a [`markov::TransitionModel`] from price history,
//! sample a [`markov::ScenarioSet`], fix each scenario's worst-case PV profile
//! ([`uncertainty::BudgetSet::worst_case_pv`]), and minimize the expected
//! cost over monotone offer surfaces with [`psm::solve`]. Each recourse
//! problem is solved exactly by [`recourse::greedy_solve`].

pub mod error;
pub mod markov;
pub mod model;
#[cfg(feature = "oracles")]
pub mod oracles;
pub mod psm;
pub mod recourse;
pub mod synthetic;
pub mod uncertainty;

pub use error::{Error, Result};
pub use markov::{PriceGrid, ScenarioSet, TransitionModel};
pub use model::{DeviceParams, DispatchTrajectory, OfferSurface};
pub use uncertainty::BudgetSet;

/// Absolute feasibility tolerance for energy (kWh) and power (kW) checks.
pub const FEAS_TOL: f64 = 1e-9;
