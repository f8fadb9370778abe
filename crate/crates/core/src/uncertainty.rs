//! Budgeted PV availability set and its worst case against a price path.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

const SET_TOL: f64 = 1e-9;

/// `{ nominal + w * xi : |xi_t| <= 1, sum |xi_t| <= budget }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSet {
    nominal: Vec<f64>,
    half_width: Vec<f64>,
    budget: f64,
}

impl BudgetSet {
    pub fn new(nominal: Vec<f64>, half_width: Vec<f64>, budget: f64) -> Result<Self> {
        check_len("PV half widths", nominal.len(), half_width.len())?;
        if nominal.is_empty() {
            return Err(Error::param("nominal PV", "needs at least one hour"));
        }
        let horizon = nominal.len() as f64;
        if !(0.0..=horizon).contains(&budget) {
            return Err(Error::param(
                "budget",
                format!("{budget} outside [0, {horizon}]"),
            ));
        }
        for (t, (&p0, &w)) in nominal.iter().zip(&half_width).enumerate() {
            if !p0.is_finite() || !(w >= 0.0) || !w.is_finite() {
                return Err(Error::param(
                    "PV band",
                    format!("hour {}: nominal {p0}, half width {w}", t + 1),
                ));
            }
            if p0 - w < -SET_TOL {
                return Err(Error::param(
                    "PV band",
                    format!("hour {}: lower availability {} is negative", t + 1, p0 - w),
                ));
            }
        }
        Ok(Self {
            nominal,
            half_width,
            budget,
        })
    }

    /// Set from per-hour availability bounds `[lower, upper]`.
    pub fn from_bounds(lower: &[f64], upper: &[f64], budget: f64) -> Result<Self> {
        check_len("PV upper bounds", lower.len(), upper.len())?;
        if let Some(t) = (0..lower.len()).find(|&t| !(lower[t] <= upper[t])) {
            return Err(Error::param(
                "PV bounds",
                format!(
                    "hour {}: lower {} exceeds upper {}",
                    t + 1,
                    lower[t],
                    upper[t]
                ),
            ));
        }
        let nominal = lower
            .iter()
            .zip(upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect();
        let half_width = lower
            .iter()
            .zip(upper)
            .map(|(l, u)| 0.5 * (u - l))
            .collect();
        Self::new(nominal, half_width, budget)
    }

    /// Variant with the same forecast accuracy in every hour.
    pub fn constant_width(nominal: Vec<f64>, half_width: f64, budget: f64) -> Result<Self> {
        let widths = vec![half_width; nominal.len()];
        Self::new(nominal, widths, budget)
    }

    pub fn horizon(&self) -> usize {
        self.nominal.len()
    }

    pub fn nominal(&self) -> &[f64] {
        &self.nominal
    }

    pub fn half_width(&self) -> &[f64] {
        &self.half_width
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn lower(&self) -> Vec<f64> {
        self.nominal
            .iter()
            .zip(&self.half_width)
            .map(|(p, w)| p - w)
            .collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.nominal
            .iter()
            .zip(&self.half_width)
            .map(|(p, w)| p + w)
            .collect()
    }

    pub fn with_budget(&self, budget: f64) -> Result<Self> {
        Self::new(self.nominal.clone(), self.half_width.clone(), budget)
    }

    pub fn contains(&self, profile: &[f64]) -> Result<bool> {
        check_len("PV profile", self.horizon(), profile.len())?;
        let mut used = 0.0;
        for t in 0..self.horizon() {
            let dev = profile[t] - self.nominal[t];
            let w = self.half_width[t];
            if w == 0.0 {
                if dev != 0.0 {
                    return Ok(false);
                }
                continue;
            }
            let xi = (dev / w).abs();
            if xi > 1.0 + SET_TOL {
                return Ok(false);
            }
            used += xi;
        }
        Ok(used <= self.budget + SET_TOL)
    }

    /// Minimizes the PV revenue `sum lambda_t * p_t` over the set: the budget
    /// goes to the hours with the largest `lambda_t * w_t` first, ties to the
    /// earlier hour. With a constant width this is plain price order.
    pub fn worst_case_pv(&self, prices: &[f64]) -> Result<Vec<f64>> {
        check_len("prices", self.horizon(), prices.len())?;
        if let Some(t) = prices.iter().position(|&p| !(p > 0.0)) {
            return Err(Error::NonPositivePrice {
                hour: t + 1,
                value: prices[t],
            });
        }
        let mut order: Vec<usize> = (0..self.horizon())
            .filter(|&t| self.half_width[t] > 0.0)
            .collect();
        let weight = |t: usize| prices[t] * self.half_width[t];
        order.sort_by(|&a, &b| weight(b).total_cmp(&weight(a)).then(a.cmp(&b)));
        let mut profile = self.nominal.clone();
        let mut remaining = self.budget;
        for t in order {
            if remaining <= 0.0 {
                break;
            }
            let xi = remaining.min(1.0);
            profile[t] -= self.half_width[t] * xi;
            remaining -= xi;
        }
        Ok(profile)
    }
}

/// Hour pairs and hours breaking the imbalance-penalty bound under which the
/// worst-case PV profile can be fixed before dispatch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KappaCheck {
    /// 0-based hour pairs `(t, t')` with `|lambda_t - lambda_t'| < 2 kappa`.
    pub close_pairs: Vec<(usize, usize)>,
    /// 0-based hours with `lambda_t - c_pv < kappa`.
    pub thin_margin: Vec<usize>,
}

impl KappaCheck {
    pub fn holds(&self) -> bool {
        self.close_pairs.is_empty() && self.thin_margin.is_empty()
    }
}

pub fn kappa_condition(prices: &[f64], kappa: f64, cost_pv: f64) -> KappaCheck {
    let mut check = KappaCheck::default();
    for t in 0..prices.len() {
        if prices[t] - cost_pv < kappa {
            check.thin_margin.push(t);
        }
        for u in t + 1..prices.len() {
            if (prices[t] - prices[u]).abs() < 2.0 * kappa {
                check.close_pairs.push((t, u));
            }
        }
    }
    check
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(budget: f64) -> BudgetSet {
        BudgetSet::constant_width(vec![5.0, 5.0, 5.0], 1.0, budget).unwrap()
    }

    #[test]
    fn nominal_is_always_inside() {
        for budget in [0.0, 0.5, 3.0] {
            assert!(set(budget).contains(&[5.0, 5.0, 5.0]).unwrap());
        }
    }

    #[test]
    fn budget_arithmetic() {
        assert!(set(1.0).contains(&[4.0, 5.0, 5.0]).unwrap());
        assert!(!set(0.5).contains(&[4.0, 5.0, 5.0]).unwrap());
        assert!(!set(3.0).contains(&[3.9, 5.0, 5.0]).unwrap());
    }

    #[test]
    fn zero_width_hours_are_pinned() {
        let s = BudgetSet::new(vec![2.0, 3.0], vec![0.0, 1.0], 2.0).unwrap();
        assert!(!s.contains(&[2.1, 3.0]).unwrap());
        assert_eq!(s.worst_case_pv(&[100.0, 1.0]).unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn worst_case_knapsack() {
        assert_eq!(
            set(0.0).worst_case_pv(&[30.0, 20.0, 10.0]).unwrap(),
            vec![5.0; 3]
        );
        assert_eq!(
            set(3.0).worst_case_pv(&[30.0, 20.0, 10.0]).unwrap(),
            vec![4.0; 3]
        );
        assert_eq!(
            set(1.5).worst_case_pv(&[30.0, 20.0, 10.0]).unwrap(),
            vec![4.0, 4.5, 5.0]
        );
    }

    #[test]
    fn unequal_widths_rank_by_revenue_at_stake() {
        let s = BudgetSet::new(vec![5.0, 5.0], vec![0.1, 3.0], 1.0).unwrap();
        assert_eq!(s.worst_case_pv(&[30.0, 20.0]).unwrap(), vec![5.0, 2.0]);
    }

    #[test]
    fn ties_go_to_the_earlier_hour() {
        assert_eq!(
            set(1.0).worst_case_pv(&[10.0, 20.0, 20.0]).unwrap(),
            vec![5.0, 4.0, 5.0]
        );
    }

    #[test]
    fn nonpositive_price_is_rejected() {
        let err = set(1.0).worst_case_pv(&[10.0, 0.0, 5.0]).unwrap_err();
        assert_eq!(
            err,
            Error::NonPositivePrice {
                hour: 2,
                value: 0.0
            }
        );
    }

    #[test]
    fn invalid_sets() {
        assert!(BudgetSet::constant_width(vec![0.5], 1.0, 0.0).is_err());
        assert!(BudgetSet::constant_width(vec![5.0], 1.0, 2.0).is_err());
        assert!(BudgetSet::from_bounds(&[3.0], &[2.0], 0.0).is_err());
    }

    #[test]
    fn kappa_pairs() {
        let check = kappa_condition(&[30.0, 20.0, 19.0], 2.0, 10.0);
        assert_eq!(check.close_pairs, vec![(1, 2)]);
        assert!(check.thin_margin.is_empty());
        assert!(kappa_condition(&[30.0, 20.0, 10.0], 5.0, 1.0).holds());
        assert_eq!(
            kappa_condition(&[30.0, 12.0], 5.0, 10.0).thin_margin,
            vec![1]
        );
    }
}
