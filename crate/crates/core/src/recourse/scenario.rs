use serde::{Deserialize, Serialize};

use super::cost::{
    build_stagewise_cost, curtailment_aware_cost, curtailment_aware_pv, effective_prices,
    EffectivePrices, RawPiece, StagewiseCost,
};
use super::greedy::{greedy_solve, EnergyFeasibleSet, RecourseSolution};
use crate::error::{check_len, Result};
use crate::model::{DeviceParams, DispatchTrajectory};

/// Mismatch magnitude (kW) under which an hour counts as balanced.
pub const KINK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Balance {
    Shortfall,
    Surplus,
    Balanced,
}

/// How the derivative of the stage cost with respect to the commitment is
/// chosen when the optimum sits on a kink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubgradientRule {
    /// `lambda` at every balanced hour.
    Midpoint,
    /// A slope pair consistent with a storage dual certificate, so the result
    /// is a true subgradient of the scenario value; `lambda` whenever that is
    /// admissible.
    #[default]
    DualConsistent,
}

/// One scenario's recourse problem with PV fixed and a given commitment path.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRecourse {
    pub prices: Vec<f64>,
    pub effective: Vec<EffectivePrices>,
    pub pv: Vec<f64>,
    pub commitment: Vec<f64>,
    pub load: Vec<f64>,
    pub costs: Vec<StagewiseCost>,
}

impl ScenarioRecourse {
    pub fn new(
        prices: &[f64],
        pv: &[f64],
        commitment: &[f64],
        params: &DeviceParams,
    ) -> Result<Self> {
        let n = params.horizon;
        check_len("scenario prices", n, prices.len())?;
        check_len("PV profile", n, pv.len())?;
        check_len("commitment", n, commitment.len())?;
        let effective: Vec<EffectivePrices> = prices
            .iter()
            .map(|&p| effective_prices(p, params))
            .collect();
        let costs = (0..n)
            .map(|t| build_stagewise_cost(&effective[t], pv[t], commitment[t], params.load[t]))
            .collect();
        Ok(Self {
            prices: prices.to_vec(),
            effective,
            pv: pv.to_vec(),
            commitment: commitment.to_vec(),
            load: params.load.clone(),
            costs,
        })
    }

    pub fn horizon(&self) -> usize {
        self.prices.len()
    }

    pub fn solve(
        &self,
        feas: &EnergyFeasibleSet,
        params: &DeviceParams,
    ) -> Result<ScenarioSolution> {
        let recourse = greedy_solve(&self.costs, feas)?;
        finish(recourse, &self.pv, &self.commitment, params)
    }

    /// Derivative of the scenario value with respect to each hour's
    /// commitment at `sol`.
    pub fn commitment_subgradient(
        &self,
        sol: &ScenarioSolution,
        feas: &EnergyFeasibleSet,
        kappa: f64,
        rule: SubgradientRule,
    ) -> Vec<f64> {
        let midpoint: Vec<f64> = (0..self.horizon())
            .map(|t| scenario_subgradient_piece(sol, t, self.prices[t], kappa))
            .collect();
        match rule {
            SubgradientRule::Midpoint => midpoint,
            SubgradientRule::DualConsistent => {
                dual_consistent(self, &sol.recourse.delta_e, feas).unwrap_or(midpoint)
            }
        }
    }
}

fn finish(
    recourse: RecourseSolution,
    pv: &[f64],
    commitment: &[f64],
    params: &DeviceParams,
) -> Result<ScenarioSolution> {
    let (dispatch, power_cap_exceeded) =
        DispatchTrajectory::assemble(&recourse.delta_e, pv, commitment, params)?;
    let balance = dispatch
        .mismatch
        .iter()
        .map(|&m| {
            if m.abs() <= KINK_TOL {
                Balance::Balanced
            } else if m < 0.0 {
                Balance::Shortfall
            } else {
                Balance::Surplus
            }
        })
        .collect();
    Ok(ScenarioSolution {
        recourse,
        dispatch,
        balance,
        power_cap_exceeded,
    })
}

/// Settles a commitment against realized prices and realized PV
/// availability. PV is dispatched anywhere in `[0, available]`, so output is
/// curtailed in hours where exporting it loses money.
pub fn solve_realized(
    prices: &[f64],
    available: &[f64],
    commitment: &[f64],
    params: &DeviceParams,
) -> Result<ScenarioSolution> {
    let n = params.horizon;
    check_len("realized prices", n, prices.len())?;
    check_len("realized PV", n, available.len())?;
    check_len("commitment", n, commitment.len())?;
    let effective: Vec<EffectivePrices> = prices
        .iter()
        .map(|&p| effective_prices(p, params))
        .collect();
    let costs: Vec<StagewiseCost> = (0..n)
        .map(|t| curtailment_aware_cost(&effective[t], available[t], commitment[t], params.load[t]))
        .collect();
    let feas = EnergyFeasibleSet::from_params(params)?;
    let recourse = greedy_solve(&costs, &feas)?;
    let pv: Vec<f64> = (0..n)
        .map(|t| {
            curtailment_aware_pv(
                &effective[t],
                recourse.delta_e[t],
                available[t],
                commitment[t],
                params.load[t],
            )
        })
        .collect();
    finish(recourse, &pv, commitment, params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSolution {
    pub recourse: RecourseSolution,
    pub dispatch: DispatchTrajectory,
    pub balance: Vec<Balance>,
    pub power_cap_exceeded: Vec<usize>,
}

/// Commitment slope of hour `t`: `lambda + kappa` on shortfall,
/// `lambda - kappa` on surplus, `lambda` when balanced.
pub fn scenario_subgradient_piece(sol: &ScenarioSolution, t: usize, price: f64, kappa: f64) -> f64 {
    match sol.balance[t] {
        Balance::Shortfall => price + kappa,
        Balance::Surplus => price - kappa,
        Balance::Balanced => price,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Link {
    /// SOC strictly inside its bounds: storage duals of adjacent hours agree.
    Equal,
    /// SOC at its upper bound: the later dual is at least the earlier one.
    Rising,
    /// SOC at its lower bound: the later dual is at most the earlier one.
    Falling,
    Free,
}

fn active_pieces(
    raw: &[RawPiece; 4],
    de: f64,
    pv: f64,
    commitment: f64,
    load: f64,
) -> Vec<RawPiece> {
    let values: Vec<f64> = raw
        .iter()
        .map(|p| p.value(de, pv, commitment, load))
        .collect();
    let top = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-9 * top.abs().max(1.0);
    raw.iter()
        .zip(&values)
        .filter(|(_, &v)| v >= top - tol)
        .map(|(p, _)| *p)
        .collect()
}

/// Range of commitment slopes over convex combinations of `pieces` whose
/// storage slope equals `pi`.
fn commitment_range(pieces: &[RawPiece], pi: f64) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let tol = 1e-9 * pi.abs().max(1.0);
    for (i, p) in pieces.iter().enumerate() {
        if (p.slope - pi).abs() <= tol {
            lo = lo.min(p.da_coef);
            hi = hi.max(p.da_coef);
        }
        for q in &pieces[i + 1..] {
            let (a, b) = if p.slope < q.slope { (p, q) } else { (q, p) };
            if a.slope < pi && pi < b.slope {
                let theta = (b.slope - pi) / (b.slope - a.slope);
                let d = theta * a.da_coef + (1.0 - theta) * b.da_coef;
                lo = lo.min(d);
                hi = hi.max(d);
            }
        }
    }
    (lo <= hi).then_some((lo, hi))
}

/// Builds storage duals `pi_t` in each hour's subdifferential that satisfy the
/// complementarity links imposed by the SOC bounds, then picks each hour's
/// commitment slope from the matching face, preferring `lambda`.
fn dual_consistent(
    problem: &ScenarioRecourse,
    de: &[f64],
    feas: &EnergyFeasibleSet,
) -> Option<Vec<f64>> {
    let n = problem.horizon();
    let mut active = Vec::with_capacity(n);
    let mut range = Vec::with_capacity(n);
    for t in 0..n {
        let raw = problem.effective[t].raw_pieces();
        let pieces = active_pieces(
            &raw,
            de[t],
            problem.pv[t],
            problem.commitment[t],
            problem.load[t],
        );
        let lo = pieces.iter().map(|p| p.slope).fold(f64::INFINITY, f64::min);
        let hi = pieces
            .iter()
            .map(|p| p.slope)
            .fold(f64::NEG_INFINITY, f64::max);
        active.push(pieces);
        range.push((lo, hi));
    }
    let soc = feas.soc(de);
    let links: Vec<Link> = (0..n.saturating_sub(1))
        .map(|t| {
            let scale = feas.energy_max().abs().max(1.0);
            let tol = 1e-9 * scale;
            let at_upper = soc[t] >= feas.upper(t + 1) - tol;
            let at_lower = soc[t] <= feas.lower(t + 1) + tol;
            match (at_upper, at_lower) {
                (true, true) => Link::Free,
                (true, false) => Link::Rising,
                (false, true) => Link::Falling,
                (false, false) => Link::Equal,
            }
        })
        .collect();

    let slack = |x: f64| 1e-9 * x.abs().max(1.0);
    let mut reach = Vec::with_capacity(n);
    reach.push(range[0]);
    for t in 1..n {
        let (plo, phi) = reach[t - 1];
        let (lo, hi) = range[t];
        let (lo, hi) = match links[t - 1] {
            Link::Equal => (lo.max(plo), hi.min(phi)),
            Link::Rising => (lo.max(plo), hi),
            Link::Falling => (lo, hi.min(phi)),
            Link::Free => (lo, hi),
        };
        if lo > hi + slack(hi) {
            return None;
        }
        reach.push((lo, hi.max(lo)));
    }

    let mut pi = vec![0.0; n];
    let (lo, hi) = reach[n - 1];
    pi[n - 1] = 0.5 * (lo + hi);
    for t in (0..n - 1).rev() {
        let (lo, hi) = reach[t];
        let next = pi[t + 1];
        let (lo, hi) = match links[t] {
            Link::Equal => (next, next),
            Link::Rising => (lo, hi.min(next)),
            Link::Falling => (lo.max(next), hi),
            Link::Free => (lo, hi),
        };
        pi[t] = next.clamp(lo.min(hi), hi.max(lo));
    }

    (0..n)
        .map(|t| {
            commitment_range(&active[t], pi[t]).map(|(lo, hi)| problem.prices[t].clamp(lo, hi))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DeviceParams;

    fn params(horizon: usize) -> DeviceParams {
        DeviceParams {
            horizon,
            storage_power_cap: 10.0,
            energy_min: 0.0,
            energy_max: 10.0,
            initial_soc: 5.0,
            eta_ch: 0.9,
            eta_dis: 0.9,
            cost_pv: 1.0,
            cost_es: 0.5,
            kappa: 5.0,
            offer_min: 0.0,
            offer_max: 20.0,
            load: vec![1.0; horizon],
        }
    }

    #[test]
    fn midpoint_rule_cases() {
        let p = params(1);
        let feas = EnergyFeasibleSet::from_params(&p).unwrap();
        for (commitment, expected, balance) in [
            (5.0, 55.0, Balance::Shortfall),
            (1.0, 45.0, Balance::Surplus),
            (2.0, 50.0, Balance::Balanced),
        ] {
            let problem = ScenarioRecourse::new(&[50.0], &[3.0], &[commitment], &p).unwrap();
            let sol = problem.solve(&feas, &p).unwrap();
            assert_eq!(sol.balance[0], balance);
            assert_eq!(scenario_subgradient_piece(&sol, 0, 50.0, 5.0), expected);
            let g =
                problem.commitment_subgradient(&sol, &feas, 5.0, SubgradientRule::DualConsistent);
            assert_eq!(g[0], expected);
        }
    }

    #[test]
    fn realized_settlement_curtails_loss_making_exports() {
        let mut p = DeviceParams {
            kappa: 25.0,
            ..params(4)
        };
        let prices = [30.0, 80.0, 20.0, 60.0];
        let avail = [2.0, 4.0, 9.0, 0.5];
        let commitment = [1.0, 6.0, 0.0, 2.0];
        let sol = solve_realized(&prices, &avail, &commitment, &p).unwrap();
        let direct = crate::model::rt_cost_direct(&sol.dispatch, &prices, &p).unwrap();
        assert!((direct - sol.recourse.value).abs() <= 1e-9 * direct.abs().max(1.0));
        assert!(sol
            .dispatch
            .pv
            .iter()
            .zip(&avail)
            .all(|(d, a)| (0.0..=*a).contains(d)));
        // With storage pinned and export below the PV cost, surplus PV is curtailed to the load.
        let single = solve_realized(
            &[20.0],
            &[9.0],
            &[0.0],
            &DeviceParams {
                kappa: 25.0,
                ..params(1)
            },
        )
        .unwrap();
        assert!((single.dispatch.pv[0] - 1.0).abs() <= 1e-9);

        p.kappa = 1.0;
        let fixed = ScenarioRecourse::new(&prices, &avail, &commitment, &p).unwrap();
        let full = fixed
            .solve(&EnergyFeasibleSet::from_params(&p).unwrap(), &p)
            .unwrap();
        let realized = solve_realized(&prices, &avail, &commitment, &p).unwrap();
        assert!(realized.recourse.value <= full.recourse.value + 1e-9);
    }

    #[test]
    fn value_matches_direct_cost_of_dispatch() {
        let p = params(4);
        let feas = EnergyFeasibleSet::from_params(&p).unwrap();
        let problem = ScenarioRecourse::new(
            &[30.0, 80.0, 20.0, 60.0],
            &[2.0, 4.0, 3.0, 0.5],
            &[1.0, 6.0, 0.0, 2.0],
            &p,
        )
        .unwrap();
        let sol = problem.solve(&feas, &p).unwrap();
        let direct = crate::model::rt_cost_direct(&sol.dispatch, &problem.prices, &p).unwrap();
        assert!((direct - sol.recourse.value).abs() <= 1e-9 * direct.abs().max(1.0));
        for (c, d) in sol.dispatch.charge.iter().zip(&sol.dispatch.discharge) {
            assert_eq!(c * d, 0.0);
        }
    }
}
