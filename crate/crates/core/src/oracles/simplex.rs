use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// `min c'x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  lower <= x <= upper`.
/// Bounds may be infinite.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DenseLp {
    pub objective: Vec<f64>,
    pub a_ub: Vec<Vec<f64>>,
    pub b_ub: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DenseLp {
    /// An LP with `n` variables, all nonnegative, and no rows.
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            objective,
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
            ..Self::default()
        }
    }

    pub fn vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) {
        self.a_ub.push(row);
        self.b_ub.push(rhs);
    }

    pub fn add_ge(&mut self, row: Vec<f64>, rhs: f64) {
        self.add_le(row.into_iter().map(|v| -v).collect(), -rhs);
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.a_eq.push(row);
        self.b_eq.push(rhs);
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    fn validate(&self) -> Result<()> {
        let n = self.vars();
        check_len("LP lower bounds", n, self.lower.len())?;
        check_len("LP upper bounds", n, self.upper.len())?;
        check_len("LP inequality rhs", self.a_ub.len(), self.b_ub.len())?;
        check_len("LP equality rhs", self.a_eq.len(), self.b_eq.len())?;
        for row in self.a_ub.iter().chain(&self.a_eq) {
            check_len("LP row", n, row.len())?;
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.objective) || !finite(&self.b_ub) || !finite(&self.b_eq) {
            return Err(Error::param(
                "LP",
                "objective and right-hand sides must be finite",
            ));
        }
        if self.a_ub.iter().chain(&self.a_eq).any(|r| !finite(r)) {
            return Err(Error::param("LP", "matrix entries must be finite"));
        }
        if (0..n).any(|j| self.lower[j].is_nan() || self.upper[j].is_nan()) {
            return Err(Error::param("LP", "bounds must not be NaN"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Objective recomputed from `x`; NaN unless optimal.
    pub objective: f64,
    pub x: Vec<f64>,
    pub iterations: usize,
}

impl LpSolution {
    pub fn expect_optimal(self) -> Result<Self> {
        match self.status {
            LpStatus::Optimal => Ok(self),
            other => Err(Error::Lp(format!("{other:?}").to_lowercase())),
        }
    }
}

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-9;
/// Consecutive degenerate pivots before switching to Bland's rule.
const DEGENERATE_RUN: usize = 50;

/// Bounded-variable tableau simplex, two-phase. Each row gets a slack with
/// bounds `[0, inf)` (inequality) or `[0, 0]` (equality); rows whose slack
/// start is out of bounds get an artificial column for phase one. Pricing is
/// Dantzig's rule, falling back to Bland's after a run of degenerate pivots.
pub fn simplex_solve(lp: &DenseLp) -> Result<LpSolution> {
    lp.validate()?;
    let mut tab = Tableau::build(lp);
    let limit = 50 * (tab.rows + tab.cols) + 1000;

    if tab.artificials > 0 {
        let phase_one: Vec<f64> = (0..tab.cols)
            .map(|j| if j >= tab.first_artificial { 1.0 } else { 0.0 })
            .collect();
        tab.set_costs(&phase_one);
        match tab.optimize(limit) {
            Outcome::Optimal => {}
            Outcome::Unbounded => unreachable!("phase one is bounded below by zero"),
            Outcome::IterationLimit => return Ok(tab.finish(lp, LpStatus::IterationLimit)),
        }
        let infeasibility: f64 = (tab.first_artificial..tab.cols).map(|j| tab.x[j]).sum();
        let scale = 1.0
            + lp.b_ub
                .iter()
                .chain(&lp.b_eq)
                .fold(0.0f64, |m, b| m.max(b.abs()));
        if infeasibility > 1e-9 * scale {
            return Ok(tab.finish(lp, LpStatus::Infeasible));
        }
        for j in tab.first_artificial..tab.cols {
            tab.upper[j] = 0.0;
            tab.x[j] = 0.0;
        }
    }
    let mut costs = lp.objective.clone();
    costs.resize(tab.cols, 0.0);
    tab.set_costs(&costs);
    let status = match tab.optimize(limit) {
        Outcome::Optimal => LpStatus::Optimal,
        Outcome::Unbounded => LpStatus::Unbounded,
        Outcome::IterationLimit => LpStatus::IterationLimit,
    };
    Ok(tab.finish(lp, status))
}

enum Outcome {
    Optimal,
    Unbounded,
    IterationLimit,
}

struct Tableau {
    rows: usize,
    cols: usize,
    structural: usize,
    first_artificial: usize,
    artificials: usize,
    /// Row-major `B^-1 A`.
    body: Vec<f64>,
    reduced: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    iterations: usize,
}

impl Tableau {
    fn build(lp: &DenseLp) -> Self {
        let n = lp.vars();
        let rows: Vec<(&Vec<f64>, f64, f64)> = lp
            .a_ub
            .iter()
            .zip(&lp.b_ub)
            .map(|(r, &b)| (r, b, f64::INFINITY))
            .chain(lp.a_eq.iter().zip(&lp.b_eq).map(|(r, &b)| (r, b, 0.0)))
            .collect();
        let m = rows.len();

        let mut x = vec![0.0; n + m];
        let mut lower = lp.lower.clone();
        let mut upper = lp.upper.clone();
        for j in 0..n {
            x[j] = if lower[j].is_finite() {
                lower[j]
            } else if upper[j].is_finite() {
                upper[j]
            } else {
                0.0
            };
        }
        // Slack start values and which rows need an artificial.
        let mut needs = Vec::new();
        for (i, (row, b, slack_upper)) in rows.iter().enumerate() {
            let activity: f64 = row.iter().zip(&x[..n]).map(|(a, v)| a * v).sum();
            let s = b - activity;
            lower.push(0.0);
            upper.push(*slack_upper);
            if s < -FEAS_TOL || s > slack_upper + FEAS_TOL {
                let at = if s < 0.0 { 0.0 } else { *slack_upper };
                x[n + i] = at;
                needs.push((i, s - at));
            } else {
                x[n + i] = s.clamp(0.0, *slack_upper);
            }
        }
        let artificials = needs.len();
        let cols = n + m + artificials;
        let mut body = vec![0.0; m * cols];
        for (i, (row, _, _)) in rows.iter().enumerate() {
            body[i * cols..i * cols + n].copy_from_slice(row);
            body[i * cols + n + i] = 1.0;
        }
        let mut basis: Vec<usize> = (n..n + m).collect();
        let mut is_basic = vec![false; cols];
        x.resize(cols, 0.0);
        for (k, &(i, residual)) in needs.iter().enumerate() {
            let col = n + m + k;
            // Row i reads `... + sign * r = b` with `r = |residual| >= 0`.
            let sign = residual.signum();
            body[i * cols + col] = sign;
            lower.push(0.0);
            upper.push(f64::INFINITY);
            x[col] = residual.abs();
            basis[i] = col;
            // Express the row in terms of its new basic column.
            if sign < 0.0 {
                for v in &mut body[i * cols..(i + 1) * cols] {
                    *v = -*v;
                }
            }
        }
        for &b in &basis {
            is_basic[b] = true;
        }
        Self {
            rows: m,
            cols,
            structural: n,
            first_artificial: n + m,
            artificials,
            body,
            reduced: vec![0.0; cols],
            lower,
            upper,
            x,
            basis,
            is_basic,
            iterations: 0,
        }
    }

    fn set_costs(&mut self, costs: &[f64]) {
        self.reduced.copy_from_slice(costs);
        for i in 0..self.rows {
            let cb = costs[self.basis[i]];
            if cb != 0.0 {
                let row = &self.body[i * self.cols..(i + 1) * self.cols];
                for (d, a) in self.reduced.iter_mut().zip(row) {
                    *d -= cb * a;
                }
            }
        }
        for &b in &self.basis {
            self.reduced[b] = 0.0;
        }
    }

    /// Direction in which nonbasic `j` would improve the objective, if any.
    fn direction(&self, j: usize) -> Option<f64> {
        if self.is_basic[j] || self.lower[j] == self.upper[j] {
            return None;
        }
        let d = self.reduced[j];
        let at_lower = self.x[j] <= self.lower[j];
        let at_upper = self.x[j] >= self.upper[j];
        if d < -COST_TOL && !at_upper {
            Some(1.0)
        } else if d > COST_TOL && !at_lower {
            Some(-1.0)
        } else {
            None
        }
    }

    fn optimize(&mut self, limit: usize) -> Outcome {
        let mut degenerate = 0usize;
        loop {
            if self.iterations >= limit {
                return Outcome::IterationLimit;
            }
            let bland = degenerate >= DEGENERATE_RUN;
            let entering = if bland {
                (0..self.cols).find_map(|j| self.direction(j).map(|d| (j, d)))
            } else {
                let mut best: Option<(usize, f64)> = None;
                let mut best_score = 0.0;
                for j in 0..self.cols {
                    if let Some(d) = self.direction(j) {
                        let score = self.reduced[j].abs();
                        if score > best_score {
                            best_score = score;
                            best = Some((j, d));
                        }
                    }
                }
                best
            };
            let Some((j, dir)) = entering else {
                return Outcome::Optimal;
            };
            self.iterations += 1;

            // Ratio test: basic i moves by -dir * theta * body[i][j].
            let flip = self.upper[j] - self.lower[j];
            let mut leave: Option<(usize, f64, f64, f64)> = None;
            for i in 0..self.rows {
                let a = self.body[i * self.cols + j];
                if a.abs() <= PIVOT_TOL {
                    continue;
                }
                let rate = dir * a;
                let b = self.basis[i];
                let (room, bound) = if rate > 0.0 {
                    ((self.x[b] - self.lower[b]) / rate, self.lower[b])
                } else {
                    ((self.upper[b] - self.x[b]) / -rate, self.upper[b])
                };
                if !room.is_finite() {
                    continue;
                }
                let room = room.max(0.0);
                let better = match leave {
                    None => true,
                    Some((li, best, _, pivot)) => {
                        if room < best - 1e-12 {
                            true
                        } else if room <= best + 1e-12 {
                            if bland {
                                b < self.basis[li]
                            } else {
                                a.abs() > pivot
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    leave = Some((i, room, bound, a.abs()));
                }
            }
            let (theta, leave) = match leave {
                Some((i, room, bound, _)) if room < flip => (room, Some((i, bound))),
                _ => (flip, None),
            };
            if !theta.is_finite() {
                return Outcome::Unbounded;
            }
            if theta <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }

            for i in 0..self.rows {
                let a = self.body[i * self.cols + j];
                if a != 0.0 {
                    let b = self.basis[i];
                    self.x[b] -= dir * theta * a;
                }
            }
            self.x[j] += dir * theta;

            match leave {
                None => {
                    self.x[j] = if dir > 0.0 {
                        self.upper[j]
                    } else {
                        self.lower[j]
                    };
                }
                Some((r, bound)) => {
                    let out = self.basis[r];
                    self.x[out] = bound;
                    self.pivot(r, j);
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let cols = self.cols;
        let p = self.body[r * cols + j];
        let (head, rest) = self.body.split_at_mut(r * cols);
        let (pivot_row, tail) = rest.split_at_mut(cols);
        for v in pivot_row.iter_mut() {
            *v /= p;
        }
        pivot_row[j] = 1.0;
        let nonzero: Vec<usize> = (0..cols).filter(|&k| pivot_row[k] != 0.0).collect();
        let eliminate = |row: &mut [f64]| {
            let f = row[j];
            if f != 0.0 {
                for &k in &nonzero {
                    row[k] -= f * pivot_row[k];
                }
                row[j] = 0.0;
            }
        };
        head.chunks_mut(cols).for_each(eliminate);
        tail.chunks_mut(cols).for_each(eliminate);
        let f = self.reduced[j];
        if f != 0.0 {
            for &k in &nonzero {
                self.reduced[k] -= f * pivot_row[k];
            }
            self.reduced[j] = 0.0;
        }
        let out = self.basis[r];
        self.is_basic[out] = false;
        self.is_basic[j] = true;
        self.basis[r] = j;
    }

    fn finish(&self, lp: &DenseLp, status: LpStatus) -> LpSolution {
        let mut x = self.x[..self.structural].to_vec();
        for (j, v) in x.iter_mut().enumerate() {
            *v = v.clamp(lp.lower[j], lp.upper[j]);
        }
        let objective = if status == LpStatus::Optimal {
            lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum()
        } else {
            f64::NAN
        };
        LpSolution {
            status,
            objective,
            x,
            iterations: self.iterations,
        }
    }
}
