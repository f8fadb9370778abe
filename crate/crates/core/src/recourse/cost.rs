use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DeviceParams;

/// Prices seen by the storage and PV once the imbalance settlement is folded
/// into the stage cost. The `_hi` slopes apply on import (shortfall) pieces for
/// storage and on export pieces for PV; the `_lo` ones on the other side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectivePrices {
    pub price: f64,
    /// `eta_dis * (lambda + kappa - c_es)`
    pub dis_hi: f64,
    /// `(lambda + kappa) / eta_ch`
    pub ch_hi: f64,
    /// `eta_dis * (lambda - kappa - c_es)`
    pub dis_lo: f64,
    /// `(lambda - kappa) / eta_ch`
    pub ch_lo: f64,
    /// `c_pv - lambda + kappa`
    pub pv_hi: f64,
    /// `c_pv - lambda - kappa`
    pub pv_lo: f64,
    /// `lambda + kappa`
    pub import: f64,
    /// `lambda - kappa`
    pub export: f64,
}

pub fn effective_prices(price: f64, params: &DeviceParams) -> EffectivePrices {
    let k = params.kappa;
    EffectivePrices {
        price,
        dis_hi: params.eta_dis * (price + k - params.cost_es),
        ch_hi: (price + k) / params.eta_ch,
        dis_lo: params.eta_dis * (price - k - params.cost_es),
        ch_lo: (price - k) / params.eta_ch,
        pv_hi: params.cost_pv - price + k,
        pv_lo: params.cost_pv - price - k,
        import: price + k,
        export: price - k,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Settlement {
    Import,
    Export,
}

/// One affine piece before folding: `slope * de + pv_coef * pv + da_coef * (p_da + load)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawPiece {
    pub slope: f64,
    pub pv_coef: f64,
    pub da_coef: f64,
    pub settlement: Settlement,
}

impl RawPiece {
    pub fn intercept(&self, pv: f64, commitment: f64, load: f64) -> f64 {
        self.pv_coef * pv + self.da_coef * (commitment + load)
    }

    pub fn value(&self, delta_e: f64, pv: f64, commitment: f64, load: f64) -> f64 {
        self.slope * delta_e + self.intercept(pv, commitment, load)
    }
}

impl EffectivePrices {
    /// The four pieces in the order discharge/import, charge/import,
    /// discharge/export, charge/export.
    pub fn raw_pieces(&self) -> [RawPiece; 4] {
        let import = |slope| RawPiece {
            slope,
            pv_coef: self.pv_lo,
            da_coef: self.import,
            settlement: Settlement::Import,
        };
        let export = |slope| RawPiece {
            slope,
            pv_coef: self.pv_hi,
            da_coef: self.export,
            settlement: Settlement::Export,
        };
        [
            import(self.dis_hi),
            import(self.ch_hi),
            export(self.dis_lo),
            export(self.ch_lo),
        ]
    }
}

/// Convex piecewise-linear function of one scalar, kept as the upper envelope
/// of its lines sorted by slope descending. Piece `i` is active on
/// `[breakpoints[i], breakpoints[i - 1]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagewiseCost {
    slopes: Vec<f64>,
    intercepts: Vec<f64>,
    breakpoints: Vec<f64>,
}

impl StagewiseCost {
    /// Upper envelope of `(slope, intercept)` lines. Lines sharing a slope are
    /// merged keeping the larger intercept; lines that are never maximal drop out.
    pub fn from_lines(lines: &[(f64, f64)]) -> Result<Self> {
        if lines.is_empty() {
            return Err(Error::param("stage cost", "needs at least one piece"));
        }
        if lines.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(Error::param("stage cost", "pieces must be finite"));
        }
        let mut sorted = lines.to_vec();
        sorted.sort_by(|x, y| x.0.total_cmp(&y.0).then(y.1.total_cmp(&x.1)));
        sorted.dedup_by(|next, kept| next.0 == kept.0);

        // Ascending slopes: the envelope runs left to right through them.
        let mut hull: Vec<(f64, f64)> = Vec::with_capacity(sorted.len());
        for line in sorted {
            while hull.len() >= 2 {
                let l1 = hull[hull.len() - 2];
                let l2 = hull[hull.len() - 1];
                // l2 is redundant once l3 overtakes l1 no later than l2 does.
                let x12 = (l1.1 - l2.1) / (l2.0 - l1.0);
                let x13 = (l1.1 - line.1) / (line.0 - l1.0);
                if x13 <= x12 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(line);
        }
        hull.reverse();
        let slopes: Vec<f64> = hull.iter().map(|l| l.0).collect();
        let intercepts: Vec<f64> = hull.iter().map(|l| l.1).collect();
        let breakpoints = (0..hull.len().saturating_sub(1))
            .map(|i| (intercepts[i + 1] - intercepts[i]) / (slopes[i] - slopes[i + 1]))
            .collect();
        Ok(Self {
            slopes,
            intercepts,
            breakpoints,
        })
    }

    pub fn len(&self) -> usize {
        self.slopes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slopes.is_empty()
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.intercepts
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        self.slopes
            .iter()
            .zip(&self.intercepts)
            .map(|(a, b)| a * x + b)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the piece active just left of `x`.
    pub fn left_piece(&self, x: f64) -> usize {
        self.breakpoints
            .iter()
            .position(|&bp| x > bp)
            .unwrap_or(self.slopes.len() - 1)
    }

    /// Index of the piece active just right of `x`.
    pub fn right_piece(&self, x: f64) -> usize {
        self.breakpoints
            .iter()
            .position(|&bp| x >= bp)
            .unwrap_or(self.slopes.len() - 1)
    }

    pub fn left_derivative(&self, x: f64) -> f64 {
        self.slopes[self.left_piece(x)]
    }

    pub fn right_derivative(&self, x: f64) -> f64 {
        self.slopes[self.right_piece(x)]
    }

    /// How far `x` can decrease while piece `i` stays active from the left.
    /// Infinite for the flattest piece.
    pub fn room_on_piece(&self, i: usize, x: f64) -> f64 {
        match self.breakpoints.get(i) {
            Some(&bp) => (x - bp).max(0.0),
            None => f64::INFINITY,
        }
    }
}

/// Folds worst-case PV, the commitment and the load into the four pieces of
/// one hour.
pub fn build_stagewise_cost(
    eff: &EffectivePrices,
    pv: f64,
    commitment: f64,
    load: f64,
) -> StagewiseCost {
    let lines: Vec<(f64, f64)> = eff
        .raw_pieces()
        .iter()
        .map(|p| (p.slope, p.intercept(pv, commitment, load)))
        .collect();
    StagewiseCost::from_lines(&lines).expect("finite pieces")
}

/// Stage cost with PV dispatch optimized inside `[0, available]`, for
/// settlement against realized availability where curtailment may pay off.
pub fn curtailment_aware_cost(
    eff: &EffectivePrices,
    available: f64,
    commitment: f64,
    load: f64,
) -> StagewiseCost {
    let raw = eff.raw_pieces();
    let (hi, lo) = (eff.pv_hi, eff.pv_lo);
    let lines: Vec<(f64, f64)> = if hi <= 0.0 {
        raw.iter()
            .map(|p| (p.slope, p.intercept(available, commitment, load)))
            .collect()
    } else if lo >= 0.0 {
        raw.iter()
            .map(|p| (p.slope, p.intercept(0.0, commitment, load)))
            .collect()
    } else {
        // min over pv of max(A + lo*pv, B + hi*pv) on [0, available].
        let theta = hi / (hi - lo);
        let (imp, exp) = raw.split_at(2);
        let mut lines: Vec<(f64, f64)> = imp
            .iter()
            .map(|p| (p.slope, p.intercept(available, commitment, load)))
            .chain(
                exp.iter()
                    .map(|p| (p.slope, p.intercept(0.0, commitment, load))),
            )
            .collect();
        for i in imp {
            for j in exp {
                let bi = i.intercept(0.0, commitment, load);
                let bj = j.intercept(0.0, commitment, load);
                lines.push((
                    theta * i.slope + (1.0 - theta) * j.slope,
                    theta * bi + (1.0 - theta) * bj,
                ));
            }
        }
        lines
    };
    StagewiseCost::from_lines(&lines).expect("finite pieces")
}

/// PV dispatch attaining [`curtailment_aware_cost`] at `delta_e`.
pub fn curtailment_aware_pv(
    eff: &EffectivePrices,
    delta_e: f64,
    available: f64,
    commitment: f64,
    load: f64,
) -> f64 {
    let (hi, lo) = (eff.pv_hi, eff.pv_lo);
    if hi <= 0.0 {
        return available;
    }
    if lo >= 0.0 {
        return 0.0;
    }
    let raw = eff.raw_pieces();
    let side = |pieces: &[RawPiece]| {
        pieces
            .iter()
            .map(|p| p.value(delta_e, 0.0, commitment, load))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let a = side(&raw[..2]);
    let b = side(&raw[2..]);
    ((a - b) / (hi - lo)).clamp(0.0, available)
}
