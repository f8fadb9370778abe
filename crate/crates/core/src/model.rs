//! Physical and market domain types of the VPP: device parameters, the offer
//! surface, and the real-time dispatch reconstructed from SOC increments.
//!
//! Time steps are one hour long, so power and energy share a numeric scale.
//! Units only need to be consistent (e.g. MW, MWh and currency per MWh).
//! Hours and states are 0-based in the API and 1-based in anything printed.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::markov::PriceGrid;
use crate::FEAS_TOL;

/// Parameters of the aggregated PV + storage + load portfolio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    pub horizon: usize,
    pub storage_power_cap: f64,
    pub energy_min: f64,
    pub energy_max: f64,
    pub initial_soc: f64,
    pub eta_ch: f64,
    pub eta_dis: f64,
    pub cost_pv: f64,
    pub cost_es: f64,
    /// Imbalance charge: shortfalls settle at `price + kappa`, surpluses at `price - kappa`.
    pub kappa: f64,
    pub offer_min: f64,
    pub offer_max: f64,
    pub load: Vec<f64>,
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::param("horizon", "must be at least one hour"));
        }
        check_len("load profile", self.horizon, self.load.len())?;
        let finite = [
            ("storage_power_cap", self.storage_power_cap),
            ("energy_min", self.energy_min),
            ("energy_max", self.energy_max),
            ("initial_soc", self.initial_soc),
            ("eta_ch", self.eta_ch),
            ("eta_dis", self.eta_dis),
            ("cost_pv", self.cost_pv),
            ("cost_es", self.cost_es),
            ("kappa", self.kappa),
            ("offer_min", self.offer_min),
            ("offer_max", self.offer_max),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::param(name, format!("{v} is not finite")));
            }
        }
        if let Some(h) = self.load.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(
                "load",
                format!("hour {} is not finite", h + 1),
            ));
        }
        for (name, eta) in [("eta_ch", self.eta_ch), ("eta_dis", self.eta_dis)] {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(Error::param(name, format!("{eta} not in (0, 1]")));
            }
        }
        if self.cost_pv < 0.0 {
            return Err(Error::param("cost_pv", "must be nonnegative"));
        }
        if self.cost_es < 0.0 {
            return Err(Error::param("cost_es", "must be nonnegative"));
        }
        if self.kappa <= 0.0 {
            return Err(Error::param("kappa", "must be positive"));
        }
        if self.storage_power_cap < 0.0 {
            return Err(Error::param("storage_power_cap", "must be nonnegative"));
        }
        if self.energy_min > self.energy_max {
            return Err(Error::param("energy_min", "exceeds energy_max"));
        }
        if self.initial_soc < self.energy_min || self.initial_soc > self.energy_max {
            return Err(Error::InfeasibleStorage {
                initial: self.initial_soc,
                min: self.energy_min,
                max: self.energy_max,
            });
        }
        if self.offer_min > self.offer_max {
            return Err(Error::param("offer_min", "exceeds offer_max"));
        }
        Ok(())
    }
}

/// First-stage decision: offered quantity per (hour, price state), row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfferSurface {
    hours: usize,
    states: usize,
    quantities: Vec<f64>,
}

impl OfferSurface {
    pub fn filled(hours: usize, states: usize, value: f64) -> Self {
        Self {
            hours,
            states,
            quantities: vec![value; hours * states],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let hours = rows.len();
        let states = rows.first().map_or(0, Vec::len);
        let mut quantities = Vec::with_capacity(hours * states);
        for row in rows {
            check_len("offer row", states, row.len())?;
            quantities.extend_from_slice(row);
        }
        Ok(Self {
            hours,
            states,
            quantities,
        })
    }

    pub fn from_flat(hours: usize, states: usize, quantities: Vec<f64>) -> Result<Self> {
        check_len("offer surface", hours * states, quantities.len())?;
        Ok(Self {
            hours,
            states,
            quantities,
        })
    }

    pub fn hours(&self) -> usize {
        self.hours
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.quantities
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.quantities
    }

    pub fn row(&self, hour: usize) -> &[f64] {
        &self.quantities[hour * self.states..(hour + 1) * self.states]
    }

    pub fn row_mut(&mut self, hour: usize) -> &mut [f64] {
        &mut self.quantities[hour * self.states..(hour + 1) * self.states]
    }

    /// The committed quantity per hour along a state path.
    pub fn commitment(&self, path: &[usize]) -> Vec<f64> {
        path.iter()
            .enumerate()
            .map(|(t, &s)| self[(t, s)])
            .collect()
    }

    pub fn same_shape(&self, other: &OfferSurface) -> bool {
        self.hours == other.hours && self.states == other.states
    }

    pub fn dot(&self, other: &OfferSurface) -> f64 {
        self.quantities
            .iter()
            .zip(&other.quantities)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn axpy(&self, alpha: f64, direction: &OfferSurface) -> OfferSurface {
        let quantities = self
            .quantities
            .iter()
            .zip(&direction.quantities)
            .map(|(x, d)| x + alpha * d)
            .collect();
        OfferSurface {
            hours: self.hours,
            states: self.states,
            quantities,
        }
    }

    pub fn sub(&self, other: &OfferSurface) -> OfferSurface {
        self.axpy(-1.0, other)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

impl Index<(usize, usize)> for OfferSurface {
    type Output = f64;

    fn index(&self, (t, s): (usize, usize)) -> &f64 {
        &self.quantities[t * self.states + s]
    }
}

impl IndexMut<(usize, usize)> for OfferSurface {
    fn index_mut(&mut self, (t, s): (usize, usize)) -> &mut f64 {
        &mut self.quantities[t * self.states + s]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    BelowMinimum,
    AboveMaximum,
    /// The quantity at `state` exceeds the quantity at a higher-priced state.
    NotMonotone {
        higher_state: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub hour: usize,
    pub state: usize,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (t, s) = (self.hour + 1, self.state + 1);
        match self.kind {
            ViolationKind::BelowMinimum => write!(f, "hour {t}, state {s}: below offer minimum"),
            ViolationKind::AboveMaximum => write!(f, "hour {t}, state {s}: above offer maximum"),
            ViolationKind::NotMonotone { higher_state } => write!(
                f,
                "hour {t}: state {s} offers more than higher-priced state {}",
                higher_state + 1
            ),
        }
    }
}

/// Checks membership in the first-stage feasible set: box bounds plus
/// monotonicity of each hour's offer curve in the price ordering.
pub fn validate_offer(
    offer: &OfferSurface,
    params: &DeviceParams,
    grid: &PriceGrid,
) -> Result<Vec<Violation>> {
    check_len("offer hours", grid.hours(), offer.hours())?;
    check_len("offer states", grid.states(), offer.states())?;
    let mut violations = Vec::new();
    for t in 0..offer.hours() {
        let row = offer.row(t);
        for (s, &q) in row.iter().enumerate() {
            if q < params.offer_min - FEAS_TOL {
                violations.push(Violation {
                    hour: t,
                    state: s,
                    kind: ViolationKind::BelowMinimum,
                });
            }
            if q > params.offer_max + FEAS_TOL {
                violations.push(Violation {
                    hour: t,
                    state: s,
                    kind: ViolationKind::AboveMaximum,
                });
            }
        }
        let prices = grid.representatives(t);
        for s in 0..row.len() {
            for s2 in 0..row.len() {
                if s != s2 && prices[s] <= prices[s2] && row[s] > row[s2] + FEAS_TOL {
                    violations.push(Violation {
                        hour: t,
                        state: s,
                        kind: ViolationKind::NotMonotone { higher_state: s2 },
                    });
                }
            }
        }
    }
    Ok(violations)
}

/// Storage powers and SOC recovered from SOC increments.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageDispatch {
    pub charge: Vec<f64>,
    pub discharge: Vec<f64>,
    pub soc: Vec<f64>,
    /// Hours whose reconstructed power exceeds the storage power cap.
    pub power_cap_exceeded: Vec<usize>,
}

/// Inverts `delta_e = eta_ch * charge - discharge / eta_dis` with at most one
/// of the pair nonzero per hour.
pub fn reconstruct_dispatch(delta_e: &[f64], params: &DeviceParams) -> Result<StorageDispatch> {
    check_len("SOC increments", params.horizon, delta_e.len())?;
    let n = delta_e.len();
    let mut charge = vec![0.0; n];
    let mut discharge = vec![0.0; n];
    let mut soc = Vec::with_capacity(n);
    let mut power_cap_exceeded = Vec::new();
    let mut level = params.initial_soc;
    for (t, &de) in delta_e.iter().enumerate() {
        if de > 0.0 {
            charge[t] = de / params.eta_ch;
        } else if de < 0.0 {
            discharge[t] = -de * params.eta_dis;
        }
        let power = charge[t].max(discharge[t]);
        if power > params.storage_power_cap + FEAS_TOL {
            power_cap_exceeded.push(t);
        }
        level += de;
        soc.push(level);
    }
    Ok(StorageDispatch {
        charge,
        discharge,
        soc,
        power_cap_exceeded,
    })
}

/// Full real-time dispatch of the portfolio against a commitment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchTrajectory {
    pub pv: Vec<f64>,
    pub charge: Vec<f64>,
    pub discharge: Vec<f64>,
    pub soc: Vec<f64>,
    pub mismatch: Vec<f64>,
    pub aggregate: Vec<f64>,
}

impl DispatchTrajectory {
    /// Builds the trajectory for storage increments `delta_e`, PV output `pv`
    /// and hourly commitment `commitment`.
    pub fn assemble(
        delta_e: &[f64],
        pv: &[f64],
        commitment: &[f64],
        params: &DeviceParams,
    ) -> Result<(Self, Vec<usize>)> {
        check_len("PV dispatch", params.horizon, pv.len())?;
        check_len("commitment", params.horizon, commitment.len())?;
        let storage = reconstruct_dispatch(delta_e, params)?;
        let aggregate: Vec<f64> = (0..params.horizon)
            .map(|t| pv[t] + storage.discharge[t] - storage.charge[t] - params.load[t])
            .collect();
        let mismatch = aggregate
            .iter()
            .zip(commitment)
            .map(|(agg, da)| agg - da)
            .collect();
        Ok((
            Self {
                pv: pv.to_vec(),
                charge: storage.charge,
                discharge: storage.discharge,
                soc: storage.soc,
                mismatch,
                aggregate,
            },
            storage.power_cap_exceeded,
        ))
    }

    pub fn horizon(&self) -> usize {
        self.pv.len()
    }
}

/// Real-time cost: PV and degradation costs plus incentive-penalty imbalance
/// settlement, evaluated on the unreformulated dispatch.
pub fn rt_cost_direct(
    dispatch: &DispatchTrajectory,
    prices: &[f64],
    params: &DeviceParams,
) -> Result<f64> {
    let n = dispatch.horizon();
    check_len("prices", n, prices.len())?;
    for (what, v) in [
        ("charge", &dispatch.charge),
        ("discharge", &dispatch.discharge),
        ("mismatch", &dispatch.mismatch),
    ] {
        check_len(what, n, v.len())?;
    }
    let kappa = params.kappa;
    Ok((0..n)
        .map(|t| {
            let mis = dispatch.mismatch[t];
            params.cost_pv * dispatch.pv[t]
                + params.cost_es * dispatch.discharge[t]
                + (prices[t] + kappa) * (-mis).max(0.0)
                - (prices[t] - kappa) * mis.max(0.0)
        })
        .sum())
}
