//! Time-inhomogeneous Markov model of day-ahead prices: per-hour quantile
//! discretization, transition counting, and seeded trajectory sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Per-hour price intervals `[lower, upper)` (the last one closed) and their
/// representative prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceGrid {
    lower: Vec<Vec<f64>>,
    upper: Vec<Vec<f64>>,
    representative: Vec<Vec<f64>>,
}

impl PriceGrid {
    pub fn new(
        lower: Vec<Vec<f64>>,
        upper: Vec<Vec<f64>>,
        representative: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let hours = representative.len();
        if hours == 0 {
            return Err(Error::param("grid", "needs at least one hour"));
        }
        check_len("grid lower edges", hours, lower.len())?;
        check_len("grid upper edges", hours, upper.len())?;
        let states = representative[0].len();
        if states == 0 {
            return Err(Error::param("grid", "needs at least one state"));
        }
        for t in 0..hours {
            check_len("grid states", states, representative[t].len())?;
            check_len("grid states", states, lower[t].len())?;
            check_len("grid states", states, upper[t].len())?;
            for s in 0..states {
                let (lo, hi, rep) = (lower[t][s], upper[t][s], representative[t][s]);
                let last = s + 1 == states;
                let inside = rep >= lo && (rep < hi || (last && rep <= hi));
                if !inside {
                    return Err(Error::param(
                        "grid",
                        format!(
                            "hour {}, state {}: representative outside its interval",
                            t + 1,
                            s + 1
                        ),
                    ));
                }
                if s > 0
                    && (representative[t][s] <= representative[t][s - 1] || lo < upper[t][s - 1])
                {
                    return Err(Error::param(
                        "grid",
                        format!("hour {}: states are not strictly ordered", t + 1),
                    ));
                }
            }
        }
        Ok(Self {
            lower,
            upper,
            representative,
        })
    }

    /// Grid whose interval edges are the midpoints between consecutive
    /// representatives; outer edges coincide with the extreme representatives.
    pub fn from_representatives(representative: Vec<Vec<f64>>) -> Result<Self> {
        let mut lower = Vec::with_capacity(representative.len());
        let mut upper = Vec::with_capacity(representative.len());
        for reps in &representative {
            let n = reps.len();
            let mut lo = Vec::with_capacity(n);
            let mut hi = Vec::with_capacity(n);
            for s in 0..n {
                lo.push(if s == 0 {
                    reps[0]
                } else {
                    0.5 * (reps[s - 1] + reps[s])
                });
                hi.push(if s + 1 == n {
                    reps[n - 1]
                } else {
                    0.5 * (reps[s] + reps[s + 1])
                });
            }
            lower.push(lo);
            upper.push(hi);
        }
        Self::new(lower, upper, representative)
    }

    pub fn hours(&self) -> usize {
        self.representative.len()
    }

    pub fn states(&self) -> usize {
        self.representative[0].len()
    }

    pub fn representatives(&self, hour: usize) -> &[f64] {
        &self.representative[hour]
    }

    pub fn price(&self, hour: usize, state: usize) -> f64 {
        self.representative[hour][state]
    }

    pub fn lower_edges(&self, hour: usize) -> &[f64] {
        &self.lower[hour]
    }

    pub fn upper_edges(&self, hour: usize) -> &[f64] {
        &self.upper[hour]
    }

    /// The state whose interval contains `price`, if any.
    pub fn state_of(&self, hour: usize, price: f64) -> Option<usize> {
        let lo = &self.lower[hour];
        let hi = &self.upper[hour];
        let n = lo.len();
        if !(price >= lo[0] && price <= hi[n - 1]) {
            return None;
        }
        // Last state whose lower edge is <= price.
        let s = lo.partition_point(|&edge| edge <= price).saturating_sub(1);
        if price < hi[s] || (s + 1 == n && price <= hi[s]) {
            Some(s)
        } else {
            None
        }
    }

    /// Like [`state_of`](Self::state_of) but clamps out-of-range prices to the
    /// nearest edge state. The flag is true when clamping happened.
    pub fn nearest_state(&self, hour: usize, price: f64) -> (usize, bool) {
        if let Some(s) = self.state_of(hour, price) {
            return (s, false);
        }
        let n = self.states();
        if price < self.lower[hour][0] {
            return (0, true);
        }
        if price > self.upper[hour][n - 1] {
            return (n - 1, true);
        }
        // Gap between intervals: pick the closer representative.
        let reps = &self.representative[hour];
        let best = (0..n)
            .min_by(|&a, &b| (reps[a] - price).abs().total_cmp(&(reps[b] - price).abs()))
            .unwrap_or(0);
        (best, true)
    }
}

/// Equal-frequency discretization of each hour's historical prices.
///
/// `history[d][t]` is the price on day `d` at hour `t`. Cuts sit midway
/// between distinct observed values, so every state is populated.
pub fn build_grid(history: &[Vec<f64>], n_states: usize) -> Result<PriceGrid> {
    if n_states == 0 {
        return Err(Error::param("n_states", "must be at least 1"));
    }
    let hours = history_hours(history)?;
    let mut lower = Vec::with_capacity(hours);
    let mut upper = Vec::with_capacity(hours);
    let mut reps = Vec::with_capacity(hours);
    for t in 0..hours {
        let mut values: Vec<f64> = history.iter().map(|day| day[t]).collect();
        values.sort_by(f64::total_cmp);
        let mut distinct: Vec<f64> = Vec::new();
        let mut cumulative: Vec<usize> = Vec::new();
        for (i, &v) in values.iter().enumerate() {
            if distinct.last() == Some(&v) {
                *cumulative.last_mut().unwrap() = i + 1;
            } else {
                distinct.push(v);
                cumulative.push(i + 1);
            }
        }
        let m = distinct.len();
        if m < n_states {
            return Err(Error::InsufficientData {
                hour: t + 1,
                distinct: m,
                states: n_states,
            });
        }
        let n = values.len() as f64;
        let mut cuts = Vec::with_capacity(n_states - 1);
        let mut prev: isize = -1;
        for k in 1..n_states {
            let target = k as f64 * n / n_states as f64;
            let first = (prev + 1) as usize;
            let last = m - 1 - (n_states - k);
            let j = (first..=last)
                .min_by(|&a, &b| {
                    let da = (cumulative[a] as f64 - target).abs();
                    let db = (cumulative[b] as f64 - target).abs();
                    da.total_cmp(&db).then(a.cmp(&b))
                })
                .expect("nonempty cut range");
            cuts.push(j);
            prev = j as isize;
        }
        let mut lo = vec![distinct[0]];
        let mut hi = Vec::with_capacity(n_states);
        for &j in &cuts {
            let edge = 0.5 * (distinct[j] + distinct[j + 1]);
            hi.push(edge);
            lo.push(edge);
        }
        hi.push(distinct[m - 1]);

        let mut rep = Vec::with_capacity(n_states);
        let mut start = 0;
        for s in 0..n_states {
            let end = if s + 1 == n_states {
                values.len()
            } else {
                cumulative[cuts[s]]
            };
            let bin = &values[start..end];
            rep.push(bin.iter().sum::<f64>() / bin.len() as f64);
            start = end;
        }
        lower.push(lo);
        upper.push(hi);
        reps.push(rep);
    }
    PriceGrid::new(lower, upper, reps)
}

fn history_hours(history: &[Vec<f64>]) -> Result<usize> {
    let first = history
        .first()
        .ok_or_else(|| Error::param("history", "needs at least one day"))?;
    let hours = first.len();
    if hours == 0 {
        return Err(Error::param("history", "needs at least one hour"));
    }
    for day in history {
        check_len("history day", hours, day.len())?;
    }
    Ok(hours)
}

/// Initial distribution and hour-to-hour transition matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    pub initial: Vec<f64>,
    /// `transitions[t][s][s2]` = P(state s2 at hour t+1 | state s at hour t).
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// (hour, state) rows never visited in the data; these hold the uniform distribution.
    pub fallback_rows: Vec<(usize, usize)>,
}

impl TransitionModel {
    pub fn hours(&self) -> usize {
        self.transitions.len() + 1
    }

    pub fn states(&self) -> usize {
        self.initial.len()
    }

    /// Probability of a full state path.
    pub fn path_probability(&self, path: &[usize]) -> f64 {
        let mut p = self.initial[path[0]];
        for (t, w) in path.windows(2).enumerate() {
            p *= self.transitions[t][w[0]][w[1]];
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.states();
        check_distribution("initial distribution", &self.initial)?;
        for matrix in &self.transitions {
            check_len("transition rows", n, matrix.len())?;
            for row in matrix {
                check_len("transition row", n, row.len())?;
                check_distribution("transition row", row)?;
            }
        }
        Ok(())
    }
}

fn check_distribution(what: &'static str, p: &[f64]) -> Result<()> {
    if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::param(what, "entries must lie in [0, 1]"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::param(what, format!("sums to {total}")));
    }
    Ok(())
}

/// Maximum-likelihood transition estimate by counting observed state pairs.
/// Unvisited rows fall back to uniform; the initial distribution is the
/// empirical frequency of hour-1 states.
pub fn estimate_transitions(history: &[Vec<f64>], grid: &PriceGrid) -> Result<TransitionModel> {
    let hours = history_hours(history)?;
    check_len("history hours", grid.hours(), hours)?;
    let n = grid.states();
    let mut states = Vec::with_capacity(history.len());
    for (d, day) in history.iter().enumerate() {
        let path = day
            .iter()
            .enumerate()
            .map(|(t, &price)| {
                grid.state_of(t, price).ok_or(Error::UnmappablePrice {
                    day: d + 1,
                    hour: t + 1,
                    value: price,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        states.push(path);
    }
    Ok(count_transitions(&states, hours, n))
}

/// Transition estimate from state paths directly.
pub fn count_transitions(paths: &[Vec<usize>], hours: usize, n: usize) -> TransitionModel {
    let days = paths.len() as f64;
    let mut initial = vec![0.0; n];
    for path in paths {
        initial[path[0]] += 1.0;
    }
    initial.iter_mut().for_each(|v| *v /= days);

    let mut transitions = Vec::with_capacity(hours.saturating_sub(1));
    let mut fallback_rows = Vec::new();
    for t in 0..hours.saturating_sub(1) {
        let mut counts = vec![vec![0usize; n]; n];
        for path in paths {
            counts[path[t]][path[t + 1]] += 1;
        }
        let matrix = counts
            .into_iter()
            .enumerate()
            .map(|(s, row)| {
                let visits: usize = row.iter().sum();
                if visits == 0 {
                    fallback_rows.push((t, s));
                    vec![1.0 / n as f64; n]
                } else {
                    row.into_iter().map(|c| c as f64 / visits as f64).collect()
                }
            })
            .collect();
        transitions.push(matrix);
    }
    TransitionModel {
        initial,
        transitions,
        fallback_rows,
    }
}

/// Sampled price trajectories with probability weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub paths: Vec<Vec<usize>>,
    pub prices: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl ScenarioSet {
    /// Builds a set from state paths, reading prices from the grid.
    pub fn from_paths(paths: Vec<Vec<usize>>, weights: Vec<f64>, grid: &PriceGrid) -> Result<Self> {
        check_len("scenario weights", paths.len(), weights.len())?;
        if paths.is_empty() {
            return Err(Error::param("scenarios", "need at least one trajectory"));
        }
        let mut prices = Vec::with_capacity(paths.len());
        for path in &paths {
            check_len("scenario path", grid.hours(), path.len())?;
            if let Some(&s) = path.iter().find(|&&s| s >= grid.states()) {
                return Err(Error::param(
                    "scenario path",
                    format!("state {} out of range", s + 1),
                ));
            }
            prices.push(
                path.iter()
                    .enumerate()
                    .map(|(t, &s)| grid.price(t, s))
                    .collect(),
            );
        }
        let set = Self {
            paths,
            prices,
            weights,
        };
        set.validate_weights()?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn hours(&self) -> usize {
        self.paths.first().map_or(0, Vec::len)
    }

    fn validate_weights(&self) -> Result<()> {
        if self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::param("scenario weights", "must be nonnegative"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::param("scenario weights", format!("sum to {total}")));
        }
        Ok(())
    }

    /// True when every price equals its state's representative.
    pub fn consistent_with(&self, grid: &PriceGrid) -> bool {
        self.paths.iter().zip(&self.prices).all(|(path, prices)| {
            path.iter()
                .zip(prices)
                .enumerate()
                .all(|(t, (&s, &p))| grid.price(t, s) == p)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// Every draw weighs `1/W`; duplicate paths are kept.
    #[default]
    Uniform,
    /// Duplicate draws are merged and weighted by normalized path probability.
    PathProbability,
}

/// Ancestral sampling of `n_samples` trajectories with uniform weights.
pub fn sample_trajectories(
    model: &TransitionModel,
    grid: &PriceGrid,
    n_samples: usize,
    seed: u64,
) -> Result<ScenarioSet> {
    sample_trajectories_with(model, grid, n_samples, seed, WeightScheme::Uniform)
}

pub fn sample_trajectories_with(
    model: &TransitionModel,
    grid: &PriceGrid,
    n_samples: usize,
    seed: u64,
    scheme: WeightScheme,
) -> Result<ScenarioSet> {
    if n_samples == 0 {
        return Err(Error::param("n_samples", "must be at least 1"));
    }
    check_len("model hours", grid.hours(), model.hours())?;
    check_len("model states", grid.states(), model.states())?;
    let paths: Vec<Vec<usize>> = (0..n_samples)
        .into_par_iter()
        .map(|i| sample_path(model, seed, i as u64))
        .collect();
    match scheme {
        WeightScheme::Uniform => {
            let w = 1.0 / n_samples as f64;
            let mut weights = vec![w; n_samples];
            fix_total(&mut weights);
            ScenarioSet::from_paths(paths, weights, grid)
        }
        WeightScheme::PathProbability => {
            let mut unique: Vec<Vec<usize>> = Vec::new();
            for path in paths {
                if !unique.contains(&path) {
                    unique.push(path);
                }
            }
            let raw: Vec<f64> = unique.iter().map(|p| model.path_probability(p)).collect();
            let total: f64 = raw.iter().sum();
            let mut weights: Vec<f64> = raw.iter().map(|p| p / total).collect();
            fix_total(&mut weights);
            ScenarioSet::from_paths(unique, weights, grid)
        }
    }
}

/// Pushes the rounding residue of a weight vector into its largest entry.
fn fix_total(weights: &mut [f64]) {
    let total: f64 = weights.iter().sum();
    if let Some(max) = weights.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *max += 1.0 - total;
    }
}

fn sample_path(model: &TransitionModel, seed: u64, index: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut path = Vec::with_capacity(model.hours());
    let mut state = draw(&model.initial, &mut rng);
    path.push(state);
    for matrix in &model.transitions {
        state = draw(&matrix[state], &mut rng);
        path.push(state);
    }
    path
}

fn draw(distribution: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (s, &p) in distribution.iter().enumerate() {
        acc += p;
        if u < acc {
            return s;
        }
    }
    // u landed in the rounding gap above the cumulative sum.
    distribution
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(distribution.len() - 1)
}
