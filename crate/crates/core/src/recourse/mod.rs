//! Second-stage recourse: the stage cost after folding in the imbalance
//! settlement, the energy feasible set, the greedy oracle and the
//! commitment subgradient.

mod cost;
mod greedy;
mod scenario;

pub use cost::{
    build_stagewise_cost, curtailment_aware_cost, curtailment_aware_pv, effective_prices,
    EffectivePrices, RawPiece, Settlement, StagewiseCost,
};
pub use greedy::{greedy_solve, greedy_solve_traced, EnergyFeasibleSet, RecourseSolution};
pub use scenario::{
    scenario_subgradient_piece, solve_realized, Balance, ScenarioRecourse, ScenarioSolution,
    SubgradientRule, KINK_TOL,
};
