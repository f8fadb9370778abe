use vpp_offer::model::validate_offer;
use vpp_offer::oracles::{extensive_form_solve, extensive_form_solve_with, LpEngine};
use vpp_offer::psm::{evaluate_objective, solve, OfferingProblem, PsmConfig, PsmStatus};
use vpp_offer::synthetic::{desk_instance, DeskConfig, DeskInstance};

fn small(seed: u64) -> DeskInstance {
    desk_instance(&DeskConfig {
        hours: 6,
        states: 3,
        scenarios: 4,
        history_days: 40,
        budget: 2.0,
        seed,
        ..DeskConfig::default()
    })
    .unwrap()
}

fn problem(inst: &DeskInstance) -> OfferingProblem {
    OfferingProblem::new(
        inst.params.clone(),
        inst.grid.clone(),
        inst.scenarios.clone(),
        inst.budget.clone(),
    )
    .unwrap()
}

#[test]
fn dense_and_sparse_extensive_forms_agree() {
    for seed in 1..=3 {
        let inst = small(seed);
        let dense = extensive_form_solve_with(
            &inst.scenarios,
            &inst.params,
            &inst.budget,
            &inst.grid,
            LpEngine::Dense,
        )
        .unwrap();
        let sparse = extensive_form_solve_with(
            &inst.scenarios,
            &inst.params,
            &inst.budget,
            &inst.grid,
            LpEngine::Sparse,
        )
        .unwrap();
        assert!((dense.value - sparse.value).abs() <= 1e-7 * dense.value.abs().max(1.0));
    }
}

#[test]
fn objective_at_extensive_form_offer_matches_its_value() {
    let inst = small(4);
    let ef = extensive_form_solve(&inst.scenarios, &inst.params, &inst.budget, &inst.grid).unwrap();
    assert!(validate_offer(&ef.offer, &inst.params, &inst.grid)
        .unwrap()
        .is_empty());
    let phi = evaluate_objective(&problem(&inst), &ef.offer, Default::default())
        .unwrap()
        .objective;
    assert!((phi - ef.value).abs() <= 1e-6 * ef.value.abs().max(1.0));
}

#[test]
fn solver_returns_a_feasible_incumbent_no_worse_than_the_start() {
    let inst = small(5);
    let problem = problem(&inst);
    let start = problem.heuristic_start().unwrap();
    assert!(validate_offer(&start, &inst.params, &inst.grid)
        .unwrap()
        .is_empty());
    let phi0 = evaluate_objective(&problem, &start, Default::default())
        .unwrap()
        .objective;
    let out = solve(&problem, &start, &PsmConfig::default()).unwrap();
    assert!(validate_offer(&out.offer, &inst.params, &inst.grid)
        .unwrap()
        .is_empty());
    assert!(out.objective <= phi0 + 1e-9);
    assert!(out.log.windows(2).all(|w| w[1].best <= w[0].best));
    assert_eq!(out.sweeps, 2 * out.iterations);
    let ef = extensive_form_solve(&inst.scenarios, &inst.params, &inst.budget, &inst.grid).unwrap();
    assert!(out.objective >= ef.value - 1e-6 * ef.value.abs());
}

#[test]
fn iteration_budget_stops_at_the_limit() {
    let inst = small(6);
    let problem = problem(&inst);
    let start = problem.heuristic_start().unwrap();
    let config = PsmConfig {
        max_iterations: 3,
        rel_tol: f64::MIN_POSITIVE,
        ..PsmConfig::default()
    };
    let out = solve(&problem, &start, &config).unwrap();
    assert_eq!(out.status, PsmStatus::IterationLimit);
    assert_eq!(out.iterations, 3);
}
