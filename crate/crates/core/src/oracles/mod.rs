//! Slow exact solvers for auditing the fast path: a dense simplex, the
//! recourse and extensive-form LPs, vertex enumeration of the max-min
//! problem, and brute-force bounded isotonic projection.
//!
//! The dense simplex suits a few hundred variables. The extensive form at
//! desk scale is larger, so it defaults to a sparse revised simplex.

mod simplex;

pub use simplex::{simplex_solve, DenseLp, LpSolution, LpStatus};

use crate::error::{check_len, Error, Result};
use crate::markov::{PriceGrid, ScenarioSet};
use crate::model::{DeviceParams, OfferSurface};
use crate::recourse::{effective_prices, EnergyFeasibleSet, StagewiseCost};
use crate::uncertainty::BudgetSet;

/// Largest number of epigraph variables the extensive form accepts.
pub const EXTENSIVE_FORM_LIMIT: usize = 2000;
/// Longest horizon accepted by the max-min enumeration.
pub const MAXMIN_HORIZON_LIMIT: usize = 4;
/// Longest vector accepted by the isotonic enumeration.
pub const ISOTONIC_LIMIT: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct LpRecourse {
    pub status: LpStatus,
    pub value: f64,
    pub delta_e: Vec<f64>,
}

/// Epigraph LP of the recourse problem over the energy feasible set.
pub fn lp_recourse(costs: &[StagewiseCost], feas: &EnergyFeasibleSet) -> Result<LpRecourse> {
    check_len("stage costs", feas.horizon(), costs.len())?;
    lp_recourse_bounds(costs, feas.initial(), feas.energy_min(), feas.energy_max())
}

/// As [`lp_recourse`] from raw SOC data; an initial level outside
/// `[min, max]` yields an infeasible status.
pub fn lp_recourse_bounds(
    costs: &[StagewiseCost],
    initial: f64,
    min: f64,
    max: f64,
) -> Result<LpRecourse> {
    let n = costs.len();
    if n == 0 {
        return Err(Error::param("horizon", "must be at least 1"));
    }
    // Variables: de_1..de_T, z_1..z_T, e_start.
    let start = 2 * n;
    let mut objective = vec![0.0; 2 * n + 1];
    objective[n..2 * n].iter_mut().for_each(|c| *c = 1.0);
    let mut lp = DenseLp::new(objective);
    for j in 0..2 * n {
        lp.set_bounds(j, f64::NEG_INFINITY, f64::INFINITY);
    }
    lp.set_bounds(start, min, max);
    let width = 2 * n + 1;

    let mut row = vec![0.0; width];
    row[start] = 1.0;
    lp.add_eq(row, initial);
    for (t, cost) in costs.iter().enumerate() {
        for (&a, &b) in cost.slopes().iter().zip(cost.intercepts()) {
            let mut row = vec![0.0; width];
            row[t] = a;
            row[n + t] = -1.0;
            lp.add_le(row, -b);
        }
    }
    for t in 0..n - 1 {
        let mut row = vec![0.0; width];
        row[start] = 1.0;
        row[..=t].iter_mut().for_each(|v| *v = 1.0);
        lp.add_le(row.clone(), max);
        lp.add_ge(row, min);
    }
    let mut row = vec![0.0; width];
    row[..n].iter_mut().for_each(|v| *v = 1.0);
    lp.add_eq(row, 0.0);

    let sol = simplex_solve(&lp)?;
    Ok(LpRecourse {
        status: sol.status,
        value: sol.objective,
        delta_e: sol.x[..n].to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtensiveForm {
    pub value: f64,
    pub offer: OfferSurface,
    pub iterations: usize,
}

/// The whole two-stage problem as one LP: offer surface, per-scenario SOC
/// trajectories and epigraph variables, with worst-case PV fixed per scenario.
pub fn extensive_form_solve(
    scenarios: &ScenarioSet,
    params: &DeviceParams,
    budget: &BudgetSet,
    grid: &PriceGrid,
) -> Result<ExtensiveForm> {
    extensive_form_solve_with(scenarios, params, budget, grid, LpEngine::Sparse)
}

/// LP backend for [`extensive_form_solve_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LpEngine {
    /// [`simplex_solve`] on the dense tableau.
    Dense,
    /// Sparse revised simplex with LU factorization.
    #[default]
    Sparse,
}

pub fn extensive_form_solve_with(
    scenarios: &ScenarioSet,
    params: &DeviceParams,
    budget: &BudgetSet,
    grid: &PriceGrid,
    engine: LpEngine,
) -> Result<ExtensiveForm> {
    params.validate()?;
    let n = params.horizon;
    let states = grid.states();
    check_len("grid hours", n, grid.hours())?;
    check_len("scenario hours", n, scenarios.hours())?;
    check_len("PV horizon", n, budget.horizon())?;

    // Identical paths share one block of variables.
    let mut paths: Vec<&Vec<usize>> = Vec::new();
    let mut prices: Vec<&Vec<f64>> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for w in 0..scenarios.len() {
        match paths.iter().position(|p| **p == scenarios.paths[w]) {
            Some(k) => weights[k] += scenarios.weights[w],
            None => {
                paths.push(&scenarios.paths[w]);
                prices.push(&scenarios.prices[w]);
                weights.push(scenarios.weights[w]);
            }
        }
    }
    let blocks = paths.len();
    if blocks * n > EXTENSIVE_FORM_LIMIT {
        return Err(Error::TooLarge {
            size: blocks * n,
            limit: EXTENSIVE_FORM_LIMIT,
        });
    }

    let offer_vars = n * states;
    let width = offer_vars + 2 * blocks * n;
    let soc = |b: usize, t: usize| offer_vars + 2 * b * n + t;
    let epi = |b: usize, t: usize| offer_vars + 2 * b * n + n + t;
    let mut objective = vec![0.0; width];
    let mut lp_rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();

    let span = params.energy_max - params.energy_min;
    let offer_scale = params.offer_min.abs().max(params.offer_max.abs());
    let mut epi_cap: f64 = 1.0;
    let mut pieces_per_block = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let pv = budget.worst_case_pv(prices[b])?;
        let mut hours = Vec::with_capacity(n);
        for t in 0..n {
            let eff = effective_prices(prices[b][t], params);
            let pieces = eff.raw_pieces();
            for p in &pieces {
                let bound = p.slope.abs() * 2.0 * span
                    + p.pv_coef.abs() * pv[t].abs()
                    + p.da_coef.abs() * (offer_scale + params.load[t].abs());
                epi_cap = epi_cap.max(bound);
            }
            hours.push((pieces, pv[t]));
        }
        pieces_per_block.push(hours);
    }
    let epi_cap = 4.0 * epi_cap + 1.0;

    let mut lower = vec![f64::NEG_INFINITY; width];
    let mut upper = vec![f64::INFINITY; width];
    for j in 0..offer_vars {
        lower[j] = params.offer_min;
        upper[j] = params.offer_max;
    }
    for b in 0..blocks {
        let rho = weights[b];
        for t in 0..n {
            let s = paths[b][t];
            objective[t * states + s] -= rho * prices[b][t];
            objective[epi(b, t)] = rho;
            let (lo, hi) = if t + 1 == n {
                (params.initial_soc, params.initial_soc)
            } else {
                (params.energy_min, params.energy_max)
            };
            lower[soc(b, t)] = lo;
            upper[soc(b, t)] = hi;
            // Bounded above so the all-slack start is feasible; never binding.
            upper[epi(b, t)] = epi_cap;

            let (pieces, pv) = &pieces_per_block[b][t];
            for p in pieces {
                // a (e_t - e_{t-1}) + d p_{t,s} - z <= -(c pv + d load)
                let mut row = vec![
                    (soc(b, t), p.slope),
                    (t * states + s, p.da_coef),
                    (epi(b, t), -1.0),
                ];
                let mut rhs = -(p.pv_coef * pv + p.da_coef * params.load[t]);
                if t == 0 {
                    rhs += p.slope * params.initial_soc;
                } else {
                    row.push((soc(b, t - 1), -p.slope));
                }
                lp_rows.push((row, rhs));
            }
        }
    }
    for t in 0..n {
        for s in 0..states.saturating_sub(1) {
            lp_rows.push((vec![(t * states + s, 1.0), (t * states + s + 1, -1.0)], 0.0));
        }
    }
    let (value, x, iterations) = match engine {
        LpEngine::Dense => {
            let mut lp = DenseLp::new(objective);
            for j in 0..width {
                lp.set_bounds(j, lower[j], upper[j]);
            }
            for (entries, rhs) in lp_rows {
                let mut row = vec![0.0; width];
                for (j, v) in entries {
                    row[j] += v;
                }
                lp.add_le(row, rhs);
            }
            let sol = simplex_solve(&lp)?.expect_optimal()?;
            (sol.objective, sol.x, sol.iterations)
        }
        LpEngine::Sparse => sparse_solve(&objective, &lower, &upper, &lp_rows)?,
    };
    let offer = OfferSurface::from_flat(n, states, x[..offer_vars].to_vec())?;
    Ok(ExtensiveForm {
        value,
        offer,
        iterations,
    })
}

/// Minimizes `objective` over the bounds and `row <= rhs` constraints with
/// the sparse backend. The value is recomputed from the returned point.
fn sparse_solve(
    objective: &[f64],
    lower: &[f64],
    upper: &[f64],
    rows: &[(Vec<(usize, f64)>, f64)],
) -> Result<(f64, Vec<f64>, usize)> {
    use microlp::{ComparisonOp, OptimizationDirection, Problem};
    let mut problem = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = (0..objective.len())
        .map(|j| problem.add_var(objective[j], (lower[j], upper[j])))
        .collect();
    for (entries, rhs) in rows {
        let terms: Vec<_> = entries.iter().map(|&(j, v)| (vars[j], v)).collect();
        problem.add_constraint(terms.as_slice(), ComparisonOp::Le, *rhs);
    }
    let outcome = problem.solve().map_err(|e| Error::Lp(e.to_string()))?;
    let iterations = outcome.stats().lp_iterations as usize;
    let solution = outcome
        .into_solution()
        .map_err(|_| Error::Lp("interrupted".into()))?;
    let x: Vec<f64> = vars.iter().map(|&v| solution.var_value(v)).collect();
    let value = objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok((value, x, iterations))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxMin {
    pub value: f64,
    /// Worst PV availability vertex.
    pub worst_pv: Vec<f64>,
    /// PV dispatch at the inner optimum for that vertex.
    pub pv_dispatch: Vec<f64>,
}

/// Exact worst-case recourse value by enumerating the sign vertices of the
/// budget set and solving the original dispatch LP (PV, charge, discharge,
/// SOC, shortfall, surplus) at each.
pub fn bruteforce_maxmin(
    prices: &[f64],
    commitment: &[f64],
    budget: &BudgetSet,
    params: &DeviceParams,
) -> Result<MaxMin> {
    params.validate()?;
    let n = params.horizon;
    check_len("prices", n, prices.len())?;
    check_len("commitment", n, commitment.len())?;
    check_len("PV horizon", n, budget.horizon())?;
    if n > MAXMIN_HORIZON_LIMIT {
        return Err(Error::TooLarge {
            size: n,
            limit: MAXMIN_HORIZON_LIMIT,
        });
    }
    let gamma = budget.budget();
    if gamma.fract() != 0.0 {
        return Err(Error::param(
            "budget",
            "vertex enumeration needs an integer budget",
        ));
    }
    let mut best: Option<MaxMin> = None;
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        let mut xi = vec![0.0; n];
        for v in xi.iter_mut() {
            *v = (c % 3) as f64 - 1.0;
            c /= 3;
        }
        if xi.iter().map(|v| v.abs()).sum::<f64>() > gamma {
            continue;
        }
        let avail: Vec<f64> = (0..n)
            .map(|t| budget.nominal()[t] + budget.half_width()[t] * xi[t])
            .collect();
        let (value, pv) = dispatch_lp(prices, commitment, &avail, params)?;
        if best.as_ref().is_none_or(|b| value > b.value) {
            best = Some(MaxMin {
                value,
                worst_pv: avail,
                pv_dispatch: pv,
            });
        }
    }
    Ok(best.expect("the nominal vertex is always enumerated"))
}

fn dispatch_lp(
    prices: &[f64],
    commitment: &[f64],
    avail: &[f64],
    params: &DeviceParams,
) -> Result<(f64, Vec<f64>)> {
    let n = params.horizon;
    // Per hour: pv, charge, discharge, soc, shortfall, surplus.
    let var = |t: usize, k: usize| 6 * t + k;
    let mut objective = vec![0.0; 6 * n];
    for t in 0..n {
        objective[var(t, 0)] = params.cost_pv;
        objective[var(t, 2)] = params.cost_es;
        objective[var(t, 4)] = prices[t] + params.kappa;
        objective[var(t, 5)] = -(prices[t] - params.kappa);
    }
    let mut lp = DenseLp::new(objective);
    for t in 0..n {
        lp.set_bounds(var(t, 0), 0.0, avail[t]);
        lp.set_bounds(var(t, 1), 0.0, params.storage_power_cap);
        lp.set_bounds(var(t, 2), 0.0, params.storage_power_cap);
        let (lo, hi) = if t + 1 == n {
            (params.initial_soc, params.initial_soc)
        } else {
            (params.energy_min, params.energy_max)
        };
        lp.set_bounds(var(t, 3), lo, hi);

        let mut row = vec![0.0; 6 * n];
        row[var(t, 3)] = 1.0;
        row[var(t, 1)] = -params.eta_ch;
        row[var(t, 2)] = 1.0 / params.eta_dis;
        let mut rhs = 0.0;
        if t == 0 {
            rhs = params.initial_soc;
        } else {
            row[var(t - 1, 3)] = -1.0;
        }
        lp.add_eq(row, rhs);

        // pv + dis - ch - load - commitment = surplus - shortfall
        let mut row = vec![0.0; 6 * n];
        row[var(t, 0)] = 1.0;
        row[var(t, 2)] = 1.0;
        row[var(t, 1)] = -1.0;
        row[var(t, 5)] = -1.0;
        row[var(t, 4)] = 1.0;
        lp.add_eq(row, params.load[t] + commitment[t]);
    }
    let sol = simplex_solve(&lp)?.expect_optimal()?;
    let pv = (0..n).map(|t| sol.x[var(t, 0)]).collect();
    Ok((sol.objective, pv))
}

/// Euclidean projection of `target` onto `{ lb <= p_1 <= ... <= p_n <= ub }`
/// by trying every partition into consecutive blocks.
pub fn bruteforce_isotonic(target: &[f64], lb: f64, ub: f64) -> Result<Vec<f64>> {
    if !(lb <= ub) {
        return Err(Error::param(
            "offer bounds",
            format!("lower {lb} exceeds upper {ub}"),
        ));
    }
    let n = target.len();
    if n > ISOTONIC_LIMIT {
        return Err(Error::TooLarge {
            size: n,
            limit: ISOTONIC_LIMIT,
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut best = Vec::new();
    let mut best_dist = f64::INFINITY;
    let mut candidate = vec![0.0; n];
    for cuts in 0..1usize << (n - 1) {
        let mut start = 0;
        for end in 1..=n {
            if end == n || cuts & (1 << (end - 1)) != 0 {
                let block = &target[start..end];
                let mean = block.iter().sum::<f64>() / block.len() as f64;
                candidate[start..end].fill(mean.clamp(lb, ub));
                start = end;
            }
        }
        if candidate.windows(2).any(|w| w[0] > w[1]) {
            continue;
        }
        let dist: f64 = candidate
            .iter()
            .zip(target)
            .map(|(p, y)| (p - y) * (p - y))
            .sum();
        if dist < best_dist {
            best_dist = dist;
            best = candidate.clone();
        }
    }
    Ok(best)
}
