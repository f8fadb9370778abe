use serde::{Deserialize, Serialize};

use super::cost::StagewiseCost;
use crate::error::{check_len, Error, Result};
use crate::model::DeviceParams;
use crate::FEAS_TOL;

/// Tolerance on slope comparisons in the branch tests.
const SLOPE_TOL: f64 = 1e-9;
/// SOC excursions at or below this are treated as rounding noise.
const VIOLATION_TOL: f64 = 1e-11;

/// `{ de : e_lo <= e0 + sum_{j<=t} de_j <= e_hi for t < T, sum de = 0 }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyFeasibleSet {
    horizon: usize,
    initial: f64,
    min: f64,
    max: f64,
}

impl EnergyFeasibleSet {
    pub fn new(horizon: usize, initial: f64, min: f64, max: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::param("horizon", "must be at least 1"));
        }
        if !(min <= initial && initial <= max) {
            return Err(Error::InfeasibleStorage { initial, min, max });
        }
        Ok(Self {
            horizon,
            initial,
            min,
            max,
        })
    }

    pub fn from_params(params: &DeviceParams) -> Result<Self> {
        Self::new(
            params.horizon,
            params.initial_soc,
            params.energy_min,
            params.energy_max,
        )
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    pub fn energy_min(&self) -> f64 {
        self.min
    }

    pub fn energy_max(&self) -> f64 {
        self.max
    }

    /// SOC upper bound at time `tau` in `0..=T`; pinned to `e0` at both ends.
    pub fn upper(&self, tau: usize) -> f64 {
        if tau == 0 || tau == self.horizon {
            self.initial
        } else {
            self.max
        }
    }

    pub fn lower(&self, tau: usize) -> f64 {
        if tau == 0 || tau == self.horizon {
            self.initial
        } else {
            self.min
        }
    }

    /// `soc[t]` is the level at the end of hour `t + 1`.
    pub fn soc(&self, delta_e: &[f64]) -> Vec<f64> {
        let mut level = self.initial;
        delta_e
            .iter()
            .map(|de| {
                level += de;
                level
            })
            .collect()
    }

    pub fn contains(&self, delta_e: &[f64], tol: f64) -> bool {
        delta_e.len() == self.horizon
            && self
                .soc(delta_e)
                .iter()
                .enumerate()
                .all(|(t, &e)| e <= self.upper(t + 1) + tol && e >= self.lower(t + 1) - tol)
    }

    /// The componentwise largest feasible increments, `e_hi(t) - e_lo(t - 1)`.
    pub fn initial_point(&self) -> Vec<f64> {
        (1..=self.horizon)
            .map(|t| self.upper(t) - self.lower(t - 1))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecourseSolution {
    pub delta_e: Vec<f64>,
    pub value: f64,
    /// Envelope piece active just left of the optimum, per hour.
    pub active_piece: Vec<usize>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    slope: f64,
    hour: usize,
    piece: usize,
}

/// The candidate list: entries sorted by slope descending, then hour, then
/// piece, with lazy deletion.
struct SlopeList {
    entries: Vec<Entry>,
    alive: Vec<bool>,
    by_hour: Vec<Vec<usize>>,
    head: usize,
}

impl SlopeList {
    fn new(costs: &[StagewiseCost]) -> Self {
        let mut entries: Vec<Entry> = costs
            .iter()
            .enumerate()
            .flat_map(|(hour, c)| {
                c.slopes()
                    .iter()
                    .enumerate()
                    .map(move |(piece, &slope)| Entry { slope, hour, piece })
            })
            .collect();
        entries.sort_by(|a, b| {
            b.slope
                .total_cmp(&a.slope)
                .then(a.hour.cmp(&b.hour))
                .then(a.piece.cmp(&b.piece))
        });
        let mut by_hour = vec![Vec::new(); costs.len()];
        for (i, e) in entries.iter().enumerate() {
            by_hour[e.hour].push(i);
        }
        Self {
            alive: vec![true; entries.len()],
            entries,
            by_hour,
            head: 0,
        }
    }

    fn first(&mut self) -> Option<(usize, Entry)> {
        while self.head < self.entries.len() && !self.alive[self.head] {
            self.head += 1;
        }
        self.entries.get(self.head).map(|&e| (self.head, e))
    }

    fn first_up_to_hour(&self, hour: usize) -> Option<(usize, Entry)> {
        (self.head..self.entries.len())
            .find(|&i| self.alive[i] && self.entries[i].hour <= hour)
            .map(|i| (i, self.entries[i]))
    }

    fn remove(&mut self, index: usize) {
        self.alive[index] = false;
    }

    fn remove_hours(&mut self, hours: std::ops::RangeInclusive<usize>) {
        for h in hours {
            for &i in &self.by_hour[h] {
                self.alive[i] = false;
            }
        }
    }
}

/// Exact minimizer of `sum_t costs[t](de_t)` over the energy feasible set.
///
/// Starts from the componentwise upper bound of the set and only ever
/// decreases coordinates, spending each unit of decrease where the left
/// derivative is largest.
pub fn greedy_solve(costs: &[StagewiseCost], feas: &EnergyFeasibleSet) -> Result<RecourseSolution> {
    run(costs, feas, None)
}

/// As [`greedy_solve`], also returning every iterate visited (the start
/// point first, the returned point last).
pub fn greedy_solve_traced(
    costs: &[StagewiseCost],
    feas: &EnergyFeasibleSet,
) -> Result<(RecourseSolution, Vec<Vec<f64>>)> {
    let mut trace = Vec::new();
    let sol = run(costs, feas, Some(&mut trace))?;
    Ok((sol, trace))
}

fn run(
    costs: &[StagewiseCost],
    feas: &EnergyFeasibleSet,
    mut trace: Option<&mut Vec<Vec<f64>>>,
) -> Result<RecourseSolution> {
    check_len("stage costs", feas.horizon(), costs.len())?;
    let n = costs.len();
    let upper: Vec<f64> = (1..=n).map(|t| feas.upper(t)).collect();
    let lower: Vec<f64> = (1..=n).map(|t| feas.lower(t)).collect();
    let mut de = feas.initial_point();
    let mut list = SlopeList::new(costs);
    let max_iterations = 8 * list.entries.len() + 4 * n + 16;
    let mut soc = vec![0.0; n];
    let mut iterations = 0;

    let violation = |soc: &[f64], s: usize| {
        let v = soc[s] - upper[s];
        if v > VIOLATION_TOL {
            v
        } else {
            0.0
        }
    };
    let slack = |soc: &[f64], s: usize| (soc[s] - lower[s]).max(0.0);

    loop {
        if let Some(tr) = trace.as_deref_mut() {
            if tr.last() != Some(&de) {
                tr.push(de.clone());
            }
        }
        let Some((head, entry)) = list.first() else {
            break;
        };
        iterations += 1;
        if iterations > max_iterations {
            return Err(Error::Greedy(format!(
                "no convergence within {max_iterations} iterations"
            )));
        }
        let mut level = feas.initial();
        for (s, d) in de.iter().enumerate() {
            level += d;
            soc[s] = level;
        }

        let t = entry.hour;
        let a = costs[t].left_derivative(de[t]);
        if a < entry.slope - SLOPE_TOL {
            list.remove(head);
            continue;
        }

        if a <= SLOPE_TOL {
            let Some(tau) = (0..n).find(|&s| violation(&soc, s) > 0.0) else {
                break;
            };
            let Some((index, target)) = list.first_up_to_hour(tau) else {
                return Err(Error::Greedy(format!(
                    "SOC upper bound violated at hour {} with no hour left to decrease",
                    tau + 1
                )));
            };
            let tp = target.hour;
            let d1 = costs[tp].room_on_piece(target.piece, de[tp]);
            let mut d2 = f64::INFINITY;
            let mut d2_at = tp;
            for s in tp..tau {
                let v = slack(&soc, s);
                if v <= d2 {
                    d2 = v;
                    d2_at = s;
                }
            }
            let d3 = violation(&soc, tau);
            if d1 <= d2 && d1 <= d3 {
                step_to_breakpoint(&mut de, costs, tp, target.piece, d1);
                list.remove(index);
            } else if d2 <= d3 {
                de[tp] -= d2;
                list.remove_hours(0..=d2_at);
            } else {
                de[tp] -= d3;
            }
            continue;
        }

        let d1 = costs[t].room_on_piece(entry.piece, de[t]);
        let mut min_slack = f64::INFINITY;
        let mut min_slack_at = t;
        for s in t..n {
            let v = slack(&soc, s);
            if v <= min_slack {
                min_slack = v;
                min_slack_at = s;
            }
        }
        let mut max_violation = 0.0;
        let mut max_violation_at = None;
        for s in 0..t {
            let v = violation(&soc, s);
            if v > max_violation {
                max_violation = v;
                max_violation_at = Some(s);
            }
        }
        let d2 = (min_slack - max_violation).max(0.0);
        if d1 <= d2 {
            step_to_breakpoint(&mut de, costs, t, entry.piece, d1);
            list.remove(head);
        } else {
            de[t] -= d2;
            match max_violation_at {
                None => list.remove_hours(0..=min_slack_at),
                Some(first) => {
                    if first < min_slack_at {
                        list.remove_hours(first + 1..=min_slack_at);
                    }
                }
            }
        }
    }

    if !feas.contains(&de, FEAS_TOL) {
        return Err(Error::Greedy(
            "candidate list exhausted at an infeasible point".into(),
        ));
    }
    let value = costs.iter().zip(&de).map(|(c, &x)| c.evaluate(x)).sum();
    let active_piece = costs
        .iter()
        .zip(&de)
        .map(|(c, &x)| c.left_piece(x))
        .collect();
    Ok(RecourseSolution {
        delta_e: de,
        value,
        active_piece,
        iterations,
    })
}

/// Moves hour `t` down by `step`, landing exactly on the breakpoint that
/// ends `piece` when the step exhausts it.
fn step_to_breakpoint(de: &mut [f64], costs: &[StagewiseCost], t: usize, piece: usize, step: f64) {
    match costs[t].breakpoints().get(piece) {
        Some(&bp) if step > 0.0 => de[t] = bp,
        _ => {}
    }
}
