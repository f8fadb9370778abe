//! The five pipeline commands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use vpp_offer::markov::{build_grid, estimate_transitions, sample_trajectories_with};
use vpp_offer::model::{rt_cost_direct, validate_offer};
use vpp_offer::oracles::{extensive_form_solve, lp_recourse};
use vpp_offer::psm::{evaluate_objective, solve as psm_solve, OfferingProblem};
use vpp_offer::recourse::{greedy_solve_traced, solve_realized, ScenarioRecourse};
use vpp_offer::{BudgetSet, OfferSurface, PriceGrid, ScenarioSet, TransitionModel};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{
    file_sha256, read_daily, read_hourly, read_json, sha256_hex, to_sorted_json, write_json,
    CsvOut, Table,
};

const BINNING: &str =
    "equal-frequency states per hour, cuts midway between distinct observed prices, \
                       representative price = mean of the state's observations";
const INITIAL_PRIOR: &str = "first-hour state frequencies of the price history";
const AGGREGATION: &str =
    "the PV fleet and the storage fleet are each aggregated into one equivalent unit";

fn num(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub binning: String,
    pub data_sha256: String,
    pub days: usize,
    pub hours: usize,
    pub initial_state_prior: String,
    pub seed: u64,
    pub states: usize,
    pub version: String,
}

/// The estimated price model as stored in `model.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub metadata: ModelMetadata,
    pub grid: PriceGrid,
    pub model: TransitionModel,
}

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.output.join(name)
}

fn estimate_doc(cfg: &RunConfig) -> CliResult<ModelDoc> {
    let path = cfg.require(&cfg.prices, "prices")?;
    let (_, history) = read_daily(path, "price")?;
    let grid = build_grid(&history, cfg.states)?;
    let model = estimate_transitions(&history, &grid)?;
    Ok(ModelDoc {
        metadata: ModelMetadata {
            binning: BINNING.into(),
            data_sha256: file_sha256(path)?,
            days: history.len(),
            hours: grid.hours(),
            initial_state_prior: INITIAL_PRIOR.into(),
            seed: cfg.seed,
            states: cfg.states,
            version: env!("CARGO_PKG_VERSION").into(),
        },
        grid,
        model,
    })
}

/// The model named in the config, or one estimated from the price history.
fn obtain_model(cfg: &RunConfig) -> CliResult<ModelDoc> {
    match &cfg.model {
        Some(path) => read_json(path),
        None => estimate_doc(cfg),
    }
}

pub fn estimate(cfg: &RunConfig) -> CliResult<()> {
    let doc = estimate_doc(cfg)?;
    let path = out_path(cfg, "model.json");
    write_json(&path, &doc)?;
    if !doc.model.fallback_rows.is_empty() {
        eprintln!(
            "warning: {} (hour, state) rows were never left in the history and hold the uniform distribution",
            doc.model.fallback_rows.len()
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn sample_set(cfg: &RunConfig, doc: &ModelDoc) -> CliResult<ScenarioSet> {
    Ok(sample_trajectories_with(
        &doc.model,
        &doc.grid,
        cfg.scenarios,
        cfg.seed,
        cfg.weights,
    )?)
}

pub fn sample(cfg: &RunConfig) -> CliResult<()> {
    let doc = obtain_model(cfg)?;
    let set = sample_set(cfg, &doc)?;
    let mut csv = CsvOut::new(&["scenario", "weight", "hour", "state", "price"])?;
    for (w, (path, weight)) in set.paths.iter().zip(&set.weights).enumerate() {
        for (t, &s) in path.iter().enumerate() {
            csv.row(&[
                (w + 1).to_string(),
                num(*weight),
                (t + 1).to_string(),
                (s + 1).to_string(),
                num(set.prices[w][t]),
            ])?;
        }
    }
    let path = out_path(cfg, "scenarios.csv");
    csv.write(&path)?;
    println!("wrote {} ({} scenarios)", path.display(), set.len());
    Ok(())
}

struct Instance {
    doc: ModelDoc,
    problem: OfferingProblem,
    inputs: Value,
}

fn build_instance(cfg: &RunConfig) -> CliResult<Instance> {
    let doc = obtain_model(cfg)?;
    let hours = doc.grid.hours();
    if cfg.budget > hours as f64 {
        return Err(CliError::input(format!(
            "budget {} exceeds the {hours}-hour horizon",
            cfg.budget
        )));
    }
    let load_path = cfg.require(&cfg.load, "load")?;
    let pv_path = cfg.require(&cfg.pv_bounds, "pv-bounds")?;
    let load: Vec<f64> = read_hourly(load_path, &["kw"], hours)?
        .into_iter()
        .map(|r| r[0])
        .collect();
    let bounds = read_hourly(pv_path, &["lower_kw", "upper_kw"], hours)?;
    let lower: Vec<f64> = bounds.iter().map(|r| r[0]).collect();
    let upper: Vec<f64> = bounds.iter().map(|r| r[1]).collect();
    let params = cfg.device.params(load);
    let budget = BudgetSet::from_bounds(&lower, &upper, cfg.budget)?;
    let scenarios = sample_set(cfg, &doc)?;
    let problem = OfferingProblem::new(params, doc.grid.clone(), scenarios, budget)?;
    let mut inputs = json!({
        "load_sha256": file_sha256(load_path)?,
        "pv_bounds_sha256": file_sha256(pv_path)?,
        "model_data_sha256": doc.metadata.data_sha256,
    });
    if let Some(path) = &cfg.model {
        inputs["model_sha256"] = json!(file_sha256(path)?);
    }
    Ok(Instance {
        doc,
        problem,
        inputs,
    })
}

fn run_metadata(cfg: &RunConfig, inputs: Value) -> CliResult<Value> {
    Ok(json!({
        "aggregation": AGGREGATION,
        "binning": BINNING,
        "config": cfg,
        "config_sha256": sha256_hex(&to_sorted_json(cfg)?),
        "initial_state_prior": INITIAL_PRIOR,
        "inputs": inputs,
        "seed": cfg.seed,
        "version": env!("CARGO_PKG_VERSION"),
    }))
}

fn write_offer(path: &Path, offer: &OfferSurface, grid: &PriceGrid) -> CliResult<()> {
    let mut csv = CsvOut::new(&["hour", "state", "price", "quantity"])?;
    for t in 0..offer.hours() {
        for (s, q) in offer.row(t).iter().enumerate() {
            csv.row(&[
                (t + 1).to_string(),
                (s + 1).to_string(),
                num(grid.price(t, s)),
                num(*q),
            ])?;
        }
    }
    csv.write(path)
}

/// Reads an offer CSV and checks it was solved on `grid`.
pub fn read_offer(path: &Path, grid: &PriceGrid) -> CliResult<OfferSurface> {
    let (hours, states) = (grid.hours(), grid.states());
    let table = Table::read(path, &["hour", "state", "price", "quantity"])?;
    if table.len() != hours * states {
        return Err(CliError::input(format!(
            "{}: expected {} rows for {hours} hours x {states} states, found {}",
            path.display(),
            hours * states,
            table.len()
        )));
    }
    let mut offer = OfferSurface::filled(hours, states, 0.0);
    let mut seen = vec![false; hours * states];
    for row in table.rows() {
        let (t, s) = (row.index(0, "hour")?, row.index(1, "state")?);
        if t > hours || s > states {
            return Err(row.fail(format!(
                "cell ({t}, {s}) outside the {hours} x {states} grid"
            )));
        }
        let price = row.number(2, "price")?;
        let expected = grid.price(t - 1, s - 1);
        if (price - expected).abs() > 1e-9 * expected.abs().max(1.0) {
            return Err(row.fail(format!(
                "price {price} differs from the model's representative {expected}; the offer belongs to another model"
            )));
        }
        let cell = (t - 1) * states + (s - 1);
        if std::mem::replace(&mut seen[cell], true) {
            return Err(row.fail(format!("duplicate cell ({t}, {s})")));
        }
        offer.row_mut(t - 1)[s - 1] = row.number(3, "quantity")?;
    }
    Ok(offer)
}

fn warnings(problem: &OfferingProblem, power_cap: &[(usize, Vec<usize>)]) -> Value {
    let kappa: Vec<Value> = problem
        .kappa_warnings
        .iter()
        .map(|(w, check)| {
            json!({
                "scenario": w + 1,
                "close_hour_pairs": check.close_pairs.iter().map(|(a, b)| [a + 1, b + 1]).collect::<Vec<_>>(),
                "thin_margin_hours": check.thin_margin.iter().map(|h| h + 1).collect::<Vec<_>>(),
            })
        })
        .collect();
    let caps: Vec<Value> = power_cap
        .iter()
        .map(|(w, hours)| json!({"scenario": w + 1, "hours": hours.iter().map(|h| h + 1).collect::<Vec<_>>()}))
        .collect();
    if !kappa.is_empty() {
        eprintln!(
            "warning: {} scenarios violate the penalty bound under which worst-case PV can be fixed before dispatch",
            kappa.len()
        );
    }
    if !caps.is_empty() {
        eprintln!(
            "warning: {} scenarios exceed the storage power cap in some hour",
            caps.len()
        );
    }
    json!({"kappa_condition": kappa, "power_cap": caps})
}

fn ef_gap(problem: &OfferingProblem, objective: f64) -> CliResult<(f64, f64)> {
    let ef = extensive_form_solve(
        &problem.scenarios,
        &problem.params,
        &problem.budget,
        &problem.grid,
    )?;
    Ok((
        ef.value,
        (objective - ef.value) / ef.value.abs().max(f64::MIN_POSITIVE),
    ))
}

fn check_gap(cfg: &RunConfig, gap: Option<f64>) -> CliResult<()> {
    match (gap, cfg.gap_tol) {
        (Some(gap), Some(tol)) if gap > tol => Err(CliError::Gap { gap, tol }),
        _ => Ok(()),
    }
}

pub fn solve(cfg: &RunConfig) -> CliResult<()> {
    let clock = Instant::now();
    let Instance {
        doc,
        problem,
        inputs,
    } = build_instance(cfg)?;
    let start = problem.heuristic_start()?;
    let out = psm_solve(&problem, &start, &cfg.psm)?;
    let eval = evaluate_objective(&problem, &out.offer, cfg.psm.subgradient)?;

    write_offer(&out_path(cfg, "offer.csv"), &out.offer, &problem.grid)?;
    let mut csv = CsvOut::new(&[
        "scenario",
        "weight",
        "hour",
        "state",
        "price",
        "commitment",
        "pv",
        "charge",
        "discharge",
        "soc",
        "mismatch",
    ])?;
    let mut power_cap = Vec::new();
    for (w, s) in eval.scenarios.iter().enumerate() {
        let d = &s.solution.dispatch;
        let path = &problem.scenarios.paths[w];
        for t in 0..problem.hours() {
            csv.row(&[
                (w + 1).to_string(),
                num(problem.scenarios.weights[w]),
                (t + 1).to_string(),
                (path[t] + 1).to_string(),
                num(problem.scenarios.prices[w][t]),
                num(out.offer.row(t)[path[t]]),
                num(d.pv[t]),
                num(d.charge[t]),
                num(d.discharge[t]),
                num(d.soc[t]),
                num(d.mismatch[t]),
            ])?;
        }
        if !s.solution.power_cap_exceeded.is_empty() {
            power_cap.push((w, s.solution.power_cap_exceeded.clone()));
        }
    }
    csv.write(&out_path(cfg, "dispatch.csv"))?;

    if cfg.trace {
        let mut trace = CsvOut::new(&["scenario", "iterate", "hour", "delta_e"])?;
        for (w, path) in problem.scenarios.paths.iter().enumerate() {
            let prices = &problem.scenarios.prices[w];
            let recourse = ScenarioRecourse::new(
                prices,
                &problem.worst_pv[w],
                &out.offer.commitment(path),
                &problem.params,
            )?;
            let (_, iterates) = greedy_solve_traced(&recourse.costs, &problem.feas)?;
            for (k, de) in iterates.iter().enumerate() {
                for (t, v) in de.iter().enumerate() {
                    trace.row(&[
                        (w + 1).to_string(),
                        k.to_string(),
                        (t + 1).to_string(),
                        num(*v),
                    ])?;
                }
            }
        }
        trace.write(&out_path(cfg, "trace.csv"))?;
    }

    let (verification, gap) = if cfg.verify {
        let (value, gap) = ef_gap(&problem, out.objective)?;
        (
            json!({"extensive_form_value": value, "gap": gap, "gap_tol": cfg.gap_tol}),
            Some(gap),
        )
    } else {
        (Value::Null, None)
    };
    let report = json!({
        "metadata": run_metadata(cfg, inputs)?,
        "objective": out.objective,
        "status": out.status,
        "iterations": out.iterations,
        "sweeps": out.sweeps,
        "distinct_sweeps": out.distinct_sweeps,
        "scenarios": problem.scenarios.len(),
        "psm_seconds": out.seconds,
        "wall_seconds": clock.elapsed().as_secs_f64(),
        "log": out.log,
        "warnings": warnings(&problem, &power_cap),
        "verification": verification,
    });
    write_json(&out_path(cfg, "run.json"), &report)?;
    write_json(&out_path(cfg, "model.json"), &doc)?;
    println!(
        "objective {:.6} after {} iterations ({:?}); wrote {}",
        out.objective,
        out.iterations,
        out.status,
        cfg.output.display()
    );
    if let Some(gap) = gap {
        println!("extensive-form gap {gap:.3e}");
    }
    check_gap(cfg, gap)
}

fn offer_path(cfg: &RunConfig) -> PathBuf {
    cfg.offer
        .clone()
        .unwrap_or_else(|| out_path(cfg, "offer.csv"))
}

pub fn verify(cfg: &RunConfig) -> CliResult<()> {
    let Instance {
        problem, inputs, ..
    } = build_instance(cfg)?;
    let path = offer_path(cfg);
    let offer = read_offer(&path, &problem.grid)?;
    let violations = validate_offer(&offer, &problem.params, &problem.grid)?;
    if !violations.is_empty() {
        return Err(CliError::input(format!(
            "{}: offer is infeasible ({} violations, first: {:?})",
            path.display(),
            violations.len(),
            violations[0]
        )));
    }
    let eval = evaluate_objective(&problem, &offer, cfg.psm.subgradient)?;
    let (value, gap) = ef_gap(&problem, eval.objective)?;
    // Audit the greedy oracle against the reference recourse LP in every scenario.
    let mut worst_recourse: f64 = 0.0;
    for (w, s) in eval.scenarios.iter().enumerate() {
        let path = &problem.scenarios.paths[w];
        let recourse = ScenarioRecourse::new(
            &problem.scenarios.prices[w],
            &problem.worst_pv[w],
            &offer.commitment(path),
            &problem.params,
        )?;
        let lp = lp_recourse(&recourse.costs, &problem.feas)?;
        let greedy = s.solution.recourse.value;
        worst_recourse = worst_recourse.max((greedy - lp.value).abs() / lp.value.abs().max(1.0));
    }
    let report = json!({
        "metadata": run_metadata(cfg, inputs)?,
        "offer_sha256": file_sha256(&path)?,
        "objective": eval.objective,
        "extensive_form_value": value,
        "gap": gap,
        "gap_tol": cfg.gap_tol,
        "greedy_vs_lp_max_rel_diff": worst_recourse,
    });
    write_json(&out_path(cfg, "verify.json"), &report)?;
    println!(
        "objective {:.6}, extensive form {value:.6}, gap {gap:.3e}",
        eval.objective
    );
    check_gap(cfg, Some(gap))
}

#[derive(Debug, Clone, Serialize)]
struct DayReport {
    date: String,
    da_revenue: f64,
    rt_cost: f64,
    profit: f64,
    clamped_hours: Vec<usize>,
    power_cap_hours: Vec<usize>,
}

pub fn evaluate(cfg: &RunConfig) -> CliResult<()> {
    let doc = obtain_model(cfg)?;
    let grid = &doc.grid;
    let hours = grid.hours();
    let offer_file = offer_path(cfg);
    let offer = read_offer(&offer_file, grid)?;
    let load_path = cfg.require(&cfg.load, "load")?;
    let load: Vec<f64> = read_hourly(load_path, &["kw"], hours)?
        .into_iter()
        .map(|r| r[0])
        .collect();
    let params = cfg.device.params(load);
    params.validate()?;

    let price_path = cfg.require(&cfg.realized_prices, "realized-prices")?;
    let pv_path = cfg.require(&cfg.realized_pv, "realized-pv")?;
    let (dates, prices) = read_daily(price_path, "price")?;
    let (pv_dates, pvs) = read_daily(pv_path, "pv_kw")?;
    for (what, days) in [("realized prices", &prices), ("realized PV", &pvs)] {
        if days[0].len() != hours {
            return Err(CliError::input(format!(
                "{what} cover {} hours but the model has {hours}",
                days[0].len()
            )));
        }
    }

    let mut csv = CsvOut::new(&[
        "date",
        "hour",
        "price",
        "state",
        "clamped",
        "commitment",
        "available_pv",
        "pv",
        "charge",
        "discharge",
        "soc",
        "mismatch",
    ])?;
    let mut days = Vec::with_capacity(dates.len());
    for (d, date) in dates.iter().enumerate() {
        let p = pv_dates.iter().position(|x| x == date).ok_or_else(|| {
            CliError::input(format!("{}: no PV rows for {date}", pv_path.display()))
        })?;
        let (lambda, avail) = (&prices[d], &pvs[p]);
        let mut clamped = Vec::new();
        let mut states = Vec::with_capacity(hours);
        for (t, &price) in lambda.iter().enumerate() {
            let (s, outside) = match grid.state_of(t, price) {
                Some(s) => (s, false),
                None => (grid.nearest_state(t, price).0, true),
            };
            if outside {
                clamped.push(t + 1);
            }
            states.push(s);
        }
        let commitment = offer.commitment(&states);
        let sol = solve_realized(lambda, avail, &commitment, &params)?;
        let rt_cost = rt_cost_direct(&sol.dispatch, lambda, &params)?;
        let da_revenue: f64 = lambda.iter().zip(&commitment).map(|(l, q)| l * q).sum();
        let dis = &sol.dispatch;
        for t in 0..hours {
            csv.row(&[
                date.clone(),
                (t + 1).to_string(),
                num(lambda[t]),
                (states[t] + 1).to_string(),
                clamped.contains(&(t + 1)).to_string(),
                num(commitment[t]),
                num(avail[t]),
                num(dis.pv[t]),
                num(dis.charge[t]),
                num(dis.discharge[t]),
                num(dis.soc[t]),
                num(dis.mismatch[t]),
            ])?;
        }
        if !clamped.is_empty() {
            eprintln!("warning: {date}: hours {clamped:?} priced outside the grid were assigned the nearest state");
        }
        days.push(DayReport {
            date: date.clone(),
            da_revenue,
            rt_cost,
            profit: da_revenue - rt_cost,
            clamped_hours: clamped,
            power_cap_hours: sol.power_cap_exceeded.iter().map(|h| h + 1).collect(),
        });
    }
    csv.write(&out_path(cfg, "evaluation.csv"))?;

    let n = days.len() as f64;
    let mean = |f: fn(&DayReport) -> f64| days.iter().map(f).sum::<f64>() / n;
    let mean_profit = mean(|d| d.profit);
    let variance = days
        .iter()
        .map(|d| (d.profit - mean_profit).powi(2))
        .sum::<f64>()
        / n;
    let report = json!({
        "metadata": {
            "config_sha256": sha256_hex(&to_sorted_json(cfg)?),
            "offer_sha256": file_sha256(&offer_file)?,
            "realized_prices_sha256": file_sha256(price_path)?,
            "realized_pv_sha256": file_sha256(pv_path)?,
            "model_data_sha256": doc.metadata.data_sha256,
            "version": env!("CARGO_PKG_VERSION"),
        },
        "days": days,
        "summary": {
            "days": days.len(),
            "mean_da_revenue": mean(|d| d.da_revenue),
            "mean_rt_cost": mean(|d| d.rt_cost),
            "mean_profit": mean_profit,
            "profit_variance": variance,
        },
    });
    write_json(&out_path(cfg, "evaluation.json"), &report)?;
    println!("{} days, mean profit {mean_profit:.6}", days.len());
    Ok(())
}
