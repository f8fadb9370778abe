//! Seeded synthetic instances: a two-valley daily price shape, a bell-shaped
//! PV band and an evening-peaking load, in consistent abstract units.
//!
//! Proportions follow a utility VPP: storage power about 0.57 of PV capacity
//! with 1.28 hours of energy, and a load large enough that the VPP is a net
//! buyer outside the PV peak.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::markov::{
    build_grid, estimate_transitions, sample_trajectories, PriceGrid, ScenarioSet, TransitionModel,
};
use crate::model::DeviceParams;
use crate::uncertainty::BudgetSet;

/// Hourly price shape with a night valley and a midday valley.
pub fn two_valley_prices(hours: usize) -> Vec<f64> {
    (0..hours)
        .map(|t| {
            let x = 24.0 * t as f64 / hours as f64;
            let bump = |center: f64, width: f64| (-((x - center) / width).powi(2)).exp();
            30.0 + 28.0 * bump(8.0, 2.2) + 36.0 * bump(19.0, 2.5)
                - 12.0 * bump(3.5, 2.5)
                - 10.0 * bump(13.0, 1.8)
        })
        .collect()
}

/// PV availability band `(lower, upper)` around a bell curve peaking at noon.
pub fn pv_band(hours: usize, capacity: f64, spread: f64) -> (Vec<f64>, Vec<f64>) {
    let nominal: Vec<f64> = (0..hours)
        .map(|t| {
            let x = 24.0 * t as f64 / hours as f64;
            if (6.0..=18.0).contains(&x) {
                capacity * (std::f64::consts::PI * (x - 6.0) / 12.0).sin().powi(2)
            } else {
                0.0
            }
        })
        .collect();
    let lower = nominal.iter().map(|p| (p - spread).max(0.0)).collect();
    let upper = nominal
        .iter()
        .map(|p| if *p > 0.0 { p + spread } else { 0.0 })
        .collect();
    (lower, upper)
}

pub fn load_profile(hours: usize) -> Vec<f64> {
    (0..hours)
        .map(|t| {
            let x = 24.0 * t as f64 / hours as f64;
            5.0 + 3.0 * (-((x - 19.5) / 3.0).powi(2)).exp()
                + 1.5 * (-((x - 8.0) / 2.0).powi(2)).exp()
        })
        .collect()
}

/// `days` of prices: the base shape scaled by a daily level and perturbed
/// hour by hour.
pub fn price_history(days: usize, hours: usize, seed: u64) -> Vec<Vec<f64>> {
    let base = two_valley_prices(hours);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..days)
        .map(|_| {
            let level = 1.0 + 0.25 * rng.gen_range(-1.0..1.0);
            let mut drift = 0.0;
            base.iter()
                .map(|b| {
                    drift = 0.6 * drift + 0.12 * rng.gen_range(-1.0..1.0);
                    (b * level * (1.0 + drift)).max(1.0)
                })
                .collect()
        })
        .collect()
}

pub fn desk_params(hours: usize) -> DeviceParams {
    DeviceParams {
        horizon: hours,
        storage_power_cap: 5.65,
        energy_min: 0.7,
        energy_max: 7.25,
        initial_soc: 3.6,
        eta_ch: 0.95,
        eta_dis: 0.95,
        cost_pv: 2.0,
        cost_es: 1.0,
        kappa: 4.0,
        offer_min: -15.0,
        offer_max: 15.0,
        load: load_profile(hours),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeskConfig {
    pub hours: usize,
    pub states: usize,
    pub scenarios: usize,
    pub history_days: usize,
    pub budget: f64,
    pub pv_capacity: f64,
    pub pv_spread: f64,
    pub seed: u64,
}

impl Default for DeskConfig {
    fn default() -> Self {
        Self {
            hours: 24,
            states: 5,
            scenarios: 25,
            history_days: 120,
            budget: 6.0,
            pv_capacity: 10.0,
            pv_spread: 1.6,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeskInstance {
    pub params: DeviceParams,
    pub history: Vec<Vec<f64>>,
    pub grid: PriceGrid,
    pub model: TransitionModel,
    pub scenarios: ScenarioSet,
    pub budget: BudgetSet,
}

pub fn desk_instance(config: &DeskConfig) -> Result<DeskInstance> {
    let params = desk_params(config.hours);
    let history = price_history(config.history_days, config.hours, config.seed);
    let grid = build_grid(&history, config.states)?;
    let model = estimate_transitions(&history, &grid)?;
    let scenarios =
        sample_trajectories(&model, &grid, config.scenarios, config.seed.wrapping_add(1))?;
    let (lower, upper) = pv_band(config.hours, config.pv_capacity, config.pv_spread);
    let budget = BudgetSet::from_bounds(&lower, &upper, config.budget.min(config.hours as f64))?;
    Ok(DeskInstance {
        params,
        history,
        grid,
        model,
        scenarios,
        budget,
    })
}
