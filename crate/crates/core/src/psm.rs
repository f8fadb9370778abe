//! Projected subgradient method over monotone offer surfaces, with PAVA
//! projection and clipped Barzilai-Borwein steps.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::markov::{PriceGrid, ScenarioSet};
use crate::model::{DeviceParams, OfferSurface};
use crate::recourse::{EnergyFeasibleSet, ScenarioRecourse, ScenarioSolution, SubgradientRule};
use crate::uncertainty::{kappa_condition, BudgetSet, KappaCheck};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsmConfig {
    pub step_initial: f64,
    pub step_min: f64,
    pub step_max: f64,
    pub rel_tol: f64,
    pub max_iterations: usize,
    pub subgradient: SubgradientRule,
}

impl Default for PsmConfig {
    fn default() -> Self {
        Self {
            step_initial: 1e-3,
            step_min: 1e-6,
            step_max: 1e-1,
            rel_tol: 1e-8,
            max_iterations: 600,
            subgradient: SubgradientRule::default(),
        }
    }
}

impl PsmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(positive(self.step_min)
            && self.step_min <= self.step_initial
            && self.step_initial <= self.step_max)
            || !self.step_max.is_finite()
        {
            return Err(Error::param(
                "step sizes",
                format!(
                    "need 0 < min <= initial <= max, got {} / {} / {}",
                    self.step_min, self.step_initial, self.step_max
                ),
            ));
        }
        if !positive(self.rel_tol) {
            return Err(Error::param("rel_tol", "must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::param("max_iterations", "must be at least 1"));
        }
        Ok(())
    }
}

/// Scenario data that does not depend on the offer: worst-case PV per
/// scenario and the energy feasible set.
#[derive(Debug, Clone)]
pub struct OfferingProblem {
    pub params: DeviceParams,
    pub grid: PriceGrid,
    pub scenarios: ScenarioSet,
    pub budget: BudgetSet,
    pub worst_pv: Vec<Vec<f64>>,
    pub feas: EnergyFeasibleSet,
    /// Scenarios where the penalty bound for fixing PV first fails.
    pub kappa_warnings: Vec<(usize, KappaCheck)>,
}

impl OfferingProblem {
    pub fn new(
        params: DeviceParams,
        grid: PriceGrid,
        scenarios: ScenarioSet,
        budget: BudgetSet,
    ) -> Result<Self> {
        params.validate()?;
        let n = params.horizon;
        check_len("grid hours", n, grid.hours())?;
        check_len("scenario hours", n, scenarios.hours())?;
        check_len("PV horizon", n, budget.horizon())?;
        let feas = EnergyFeasibleSet::from_params(&params)?;
        let worst_pv = scenarios
            .prices
            .par_iter()
            .enumerate()
            .map(|(w, prices)| budget.worst_case_pv(prices).map_err(|e| e.in_scenario(w)))
            .collect::<Result<Vec<_>>>()?;
        let kappa_warnings = scenarios
            .prices
            .iter()
            .enumerate()
            .map(|(w, prices)| (w, kappa_condition(prices, params.kappa, params.cost_pv)))
            .filter(|(_, check)| !check.holds())
            .collect();
        Ok(Self {
            params,
            grid,
            scenarios,
            budget,
            worst_pv,
            feas,
            kappa_warnings,
        })
    }

    pub fn hours(&self) -> usize {
        self.params.horizon
    }

    pub fn states(&self) -> usize {
        self.grid.states()
    }

    /// Start point: every scenario's price-taking self-dispatch under its
    /// worst-case PV, summarized per cell by the weighted median and projected
    /// onto the feasible set. Unvisited cells take the median of their hour.
    pub fn heuristic_start(&self) -> Result<OfferSurface> {
        let (n, states) = (self.hours(), self.states());
        // A vanishing penalty leaves pure arbitrage at the day-ahead price.
        let mut taker = self.params.clone();
        let top = self
            .scenarios
            .prices
            .iter()
            .flatten()
            .fold(0.0_f64, |m, p| m.max(p.abs()));
        taker.kappa = 1e-9 * (1.0 + top);
        let zero = vec![0.0; n];
        let aggregates = (0..self.scenarios.len())
            .into_par_iter()
            .map(|w| {
                let recourse = ScenarioRecourse::new(
                    &self.scenarios.prices[w],
                    &self.worst_pv[w],
                    &zero,
                    &taker,
                )?;
                Ok(recourse.solve(&self.feas, &taker)?.dispatch.aggregate)
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;

        let mut start = OfferSurface::filled(n, states, 0.0);
        for t in 0..n {
            let mut by_state: Vec<Vec<(f64, f64)>> = vec![Vec::new(); states];
            for (w, path) in self.scenarios.paths.iter().enumerate() {
                by_state[path[t]].push((aggregates[w][t], self.scenarios.weights[w]));
            }
            let mut hour: Vec<(f64, f64)> = by_state.iter().flatten().copied().collect();
            let fallback = weighted_median(&mut hour).unwrap_or(0.0);
            for (s, cell) in by_state.iter_mut().enumerate() {
                start[(t, s)] = weighted_median(cell).unwrap_or(fallback);
            }
        }
        pava_project(
            &start,
            &self.grid,
            self.params.offer_min,
            self.params.offer_max,
        )
    }
}

/// Lower weighted median of `(value, weight)` pairs.
fn weighted_median(items: &mut [(f64, f64)]) -> Option<f64> {
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = items.iter().map(|x| x.1).sum();
    let mut acc = 0.0;
    for &(v, w) in items.iter() {
        acc += w;
        if acc >= 0.5 * total {
            return Some(v);
        }
    }
    items.last().map(|x| x.0)
}

/// One scenario's share of the objective at a given offer.
#[derive(Debug, Clone)]
pub struct ScenarioEvaluation {
    pub revenue: f64,
    pub recourse: f64,
    pub solution: ScenarioSolution,
    /// Derivative of the recourse value with respect to each hour's commitment.
    pub commitment_slopes: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub objective: f64,
    pub scenarios: Vec<ScenarioEvaluation>,
}

/// `Phi(offer) = sum_w rho_w (-sum_t lambda_t p_{t, s_t} + V_w)`, solving every
/// scenario's recourse in parallel and reducing in index order.
pub fn evaluate_objective(
    problem: &OfferingProblem,
    offer: &OfferSurface,
    rule: SubgradientRule,
) -> Result<Evaluation> {
    if offer.hours() != problem.hours() || offer.states() != problem.states() {
        return Err(Error::DimensionMismatch {
            what: "offer surface",
            expected: problem.hours() * problem.states(),
            got: offer.hours() * offer.states(),
        });
    }
    let sc = &problem.scenarios;
    let scenarios = (0..sc.len())
        .into_par_iter()
        .map(|w| {
            let commitment = offer.commitment(&sc.paths[w]);
            let prices = &sc.prices[w];
            let revenue: f64 = prices.iter().zip(&commitment).map(|(l, p)| l * p).sum();
            let recourse =
                ScenarioRecourse::new(prices, &problem.worst_pv[w], &commitment, &problem.params)?;
            let solution = recourse.solve(&problem.feas, &problem.params)?;
            let commitment_slopes = recourse.commitment_subgradient(
                &solution,
                &problem.feas,
                problem.params.kappa,
                rule,
            );
            Ok(ScenarioEvaluation {
                revenue,
                recourse: solution.recourse.value,
                solution,
                commitment_slopes,
            })
        })
        .enumerate()
        .map(|(w, r): (usize, Result<ScenarioEvaluation>)| r.map_err(|e| e.in_scenario(w)))
        .collect::<Result<Vec<_>>>()?;
    let objective = scenarios
        .iter()
        .zip(&sc.weights)
        .map(|(s, rho)| rho * (s.recourse - s.revenue))
        .sum();
    Ok(Evaluation {
        objective,
        scenarios,
    })
}

/// `g_{t,s} = sum_{w : s_t(w) = s} rho_w (-lambda_{t,w} + dV_w/dp_t)`.
pub fn assemble_subgradient(
    evaluation: &Evaluation,
    scenarios: &ScenarioSet,
    grid: &PriceGrid,
) -> OfferSurface {
    let mut g = OfferSurface::filled(grid.hours(), grid.states(), 0.0);
    for (w, eval) in evaluation.scenarios.iter().enumerate() {
        let rho = scenarios.weights[w];
        for (t, &s) in scenarios.paths[w].iter().enumerate() {
            g[(t, s)] += rho * (eval.commitment_slopes[t] - scenarios.prices[w][t]);
        }
    }
    g
}

/// Pool-adjacent-violators fit of a nondecreasing sequence, then clipping.
pub fn pava_row(target: &[f64], lb: f64, ub: f64) -> Vec<f64> {
    // Blocks as (sum, count).
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(target.len());
    for &y in target {
        blocks.push((y, 1));
        while blocks.len() >= 2 {
            let (s2, c2) = blocks[blocks.len() - 1];
            let (s1, c1) = blocks[blocks.len() - 2];
            if s1 / c1 as f64 > s2 / c2 as f64 {
                blocks.pop();
                *blocks.last_mut().unwrap() = (s1 + s2, c1 + c2);
            } else {
                break;
            }
        }
    }
    let mut out = Vec::with_capacity(target.len());
    for (sum, count) in blocks {
        let v = (sum / count as f64).clamp(lb, ub);
        out.extend(std::iter::repeat_n(v, count));
    }
    out
}

/// Euclidean projection onto box-bounded offers that are nondecreasing in the
/// price state within each hour.
pub fn pava_project(
    target: &OfferSurface,
    grid: &PriceGrid,
    lb: f64,
    ub: f64,
) -> Result<OfferSurface> {
    if !(lb <= ub) {
        return Err(Error::param(
            "offer bounds",
            format!("lower {lb} exceeds upper {ub}"),
        ));
    }
    check_len("offer hours", grid.hours(), target.hours())?;
    check_len("offer states", grid.states(), target.states())?;
    let mut out = target.clone();
    for t in 0..target.hours() {
        let row = pava_row(target.row(t), lb, ub);
        out.row_mut(t).copy_from_slice(&row);
    }
    Ok(out)
}

/// Clipped Barzilai-Borwein step; `step_initial` when `dg` vanishes.
pub fn bb_step(dp: &OfferSurface, dg: &OfferSurface, config: &PsmConfig) -> f64 {
    let gg = dg.dot(dg);
    if gg == 0.0 {
        return config.step_initial;
    }
    (dp.dot(dg) / gg).clamp(config.step_min, config.step_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsmStatus {
    Converged,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Objective at the iterate the step starts from.
    pub objective: f64,
    /// Objective after the projected step.
    pub next_objective: f64,
    pub step: f64,
    pub rel_change: f64,
    pub best: f64,
    pub subgradient_norm: f64,
}

#[derive(Debug, Clone)]
pub struct PsmOutcome {
    pub offer: OfferSurface,
    pub objective: f64,
    pub status: PsmStatus,
    pub iterations: usize,
    /// Full oracle sweeps over all scenarios (two per iteration).
    pub sweeps: usize,
    /// Sweeps at points not evaluated before (one per iteration plus the start).
    pub distinct_sweeps: usize,
    pub log: Vec<IterationRecord>,
    pub seconds: f64,
}

/// Hook called after every iteration with the iterate, its evaluation and
/// subgradient; used to audit intermediate points.
pub type IterateHook<'a> = dyn FnMut(usize, &OfferSurface, &Evaluation, &OfferSurface) + 'a;

pub fn solve(
    problem: &OfferingProblem,
    initial: &OfferSurface,
    config: &PsmConfig,
) -> Result<PsmOutcome> {
    solve_with_hook(problem, initial, config, &mut |_, _, _, _| {})
}

pub fn solve_with_hook(
    problem: &OfferingProblem,
    initial: &OfferSurface,
    config: &PsmConfig,
    hook: &mut IterateHook<'_>,
) -> Result<PsmOutcome> {
    config.validate()?;
    let clock = Instant::now();
    let (lb, ub) = (problem.params.offer_min, problem.params.offer_max);
    let mut current = pava_project(initial, &problem.grid, lb, ub)?;
    let mut best_offer = current.clone();
    let mut best = f64::INFINITY;
    let mut previous: Option<(OfferSurface, OfferSurface)> = None;
    let mut log = Vec::new();
    let mut sweeps = 0;
    let mut status = PsmStatus::IterationLimit;

    for k in 0..config.max_iterations {
        let eval = evaluate_objective(problem, &current, config.subgradient)?;
        sweeps += 1;
        let phi = eval.objective;
        if phi < best {
            best = phi;
            best_offer = current.clone();
        }
        let g = assemble_subgradient(&eval, &problem.scenarios, &problem.grid);
        hook(k, &current, &eval, &g);
        let step = match &previous {
            Some((p_prev, g_prev)) => bb_step(&current.sub(p_prev), &g.sub(g_prev), config),
            None => config.step_initial,
        };
        let next = pava_project(&current.axpy(-step, &g), &problem.grid, lb, ub)?;
        let next_phi = evaluate_objective(problem, &next, config.subgradient)?.objective;
        sweeps += 1;
        if next_phi < best {
            best = next_phi;
            best_offer = next.clone();
        }
        let rel_change = (next_phi - phi).abs() / phi.abs().max(1.0);
        log.push(IterationRecord {
            iteration: k,
            objective: phi,
            next_objective: next_phi,
            step,
            rel_change,
            best,
            subgradient_norm: g.norm(),
        });
        previous = Some((current, g));
        current = next;
        if rel_change <= config.rel_tol {
            status = PsmStatus::Converged;
            break;
        }
    }
    let iterations = log.len();
    Ok(PsmOutcome {
        offer: best_offer,
        objective: best,
        status,
        iterations,
        sweeps,
        distinct_sweeps: iterations + 1,
        log,
        seconds: clock.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surface(rows: &[Vec<f64>]) -> OfferSurface {
        OfferSurface::from_rows(rows).unwrap()
    }

    #[test]
    fn pava_examples() {
        assert_eq!(pava_row(&[3.0, 1.0, 2.0], 0.0, 5.0), vec![2.0, 2.0, 2.0]);
        assert_eq!(pava_row(&[6.0, 7.0], 0.0, 5.0), vec![5.0, 5.0]);
        assert_eq!(pava_row(&[1.0, 2.0, 4.0], 0.0, 5.0), vec![1.0, 2.0, 4.0]);
        assert_eq!(
            pava_row(&[4.0, 3.0, -2.0, 9.0], 0.0, 5.0),
            vec![5.0 / 3.0, 5.0 / 3.0, 5.0 / 3.0, 5.0]
        );
    }

    #[test]
    fn projection_rejects_inverted_box() {
        let grid = PriceGrid::from_representatives(vec![vec![1.0, 2.0]]).unwrap();
        let err = pava_project(&surface(&[vec![0.0, 1.0]]), &grid, 2.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { .. }));
    }

    #[test]
    fn bb_step_cases() {
        let config = PsmConfig {
            step_max: 10.0,
            ..PsmConfig::default()
        };
        let dp = surface(&[vec![1.0, 0.0]]);
        let dg = surface(&[vec![2.0, 0.0]]);
        assert_eq!(bb_step(&dp, &dg, &config), 0.5);
        let zero = surface(&[vec![0.0, 0.0]]);
        assert_eq!(bb_step(&dp, &zero, &config), config.step_initial);
        let neg = surface(&[vec![-2.0, 0.0]]);
        assert_eq!(bb_step(&dp, &neg, &config), config.step_min);
    }

    #[test]
    fn config_validation() {
        assert!(PsmConfig::default().validate().is_ok());
        let bad = PsmConfig {
            step_min: 1.0,
            ..PsmConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = PsmConfig {
            max_iterations: 0,
            ..PsmConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
