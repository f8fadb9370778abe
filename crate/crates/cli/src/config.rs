//! Run configuration: a JSON file, then command-line overrides.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use vpp_offer::markov::WeightScheme;
use vpp_offer::psm::PsmConfig;
use vpp_offer::synthetic::desk_params;
use vpp_offer::DeviceParams;

use crate::error::{CliError, CliResult};

/// Portfolio parameters that do not depend on the horizon or the load file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    pub storage_power_cap: f64,
    pub energy_min: f64,
    pub energy_max: f64,
    pub initial_soc: f64,
    pub eta_ch: f64,
    pub eta_dis: f64,
    pub cost_pv: f64,
    pub cost_es: f64,
    pub kappa: f64,
    pub offer_min: f64,
    pub offer_max: f64,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        let p = desk_params(1);
        Self {
            storage_power_cap: p.storage_power_cap,
            energy_min: p.energy_min,
            energy_max: p.energy_max,
            initial_soc: p.initial_soc,
            eta_ch: p.eta_ch,
            eta_dis: p.eta_dis,
            cost_pv: p.cost_pv,
            cost_es: p.cost_es,
            kappa: p.kappa,
            offer_min: p.offer_min,
            offer_max: p.offer_max,
        }
    }
}

impl DeviceConfig {
    pub fn params(&self, load: Vec<f64>) -> DeviceParams {
        DeviceParams {
            horizon: load.len(),
            storage_power_cap: self.storage_power_cap,
            energy_min: self.energy_min,
            energy_max: self.energy_max,
            initial_soc: self.initial_soc,
            eta_ch: self.eta_ch,
            eta_dis: self.eta_dis,
            cost_pv: self.cost_pv,
            cost_es: self.cost_es,
            kappa: self.kappa,
            offer_min: self.offer_min,
            offer_max: self.offer_max,
            load,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Price history CSV: `date,hour,price`.
    pub prices: Option<PathBuf>,
    /// Load CSV: `hour,kw`.
    pub load: Option<PathBuf>,
    /// PV bounds CSV: `hour,lower_kw,upper_kw`.
    pub pv_bounds: Option<PathBuf>,
    /// Estimated model JSON; estimated from `prices` when absent.
    pub model: Option<PathBuf>,
    /// Offer surface CSV for `evaluate` and `verify`.
    pub offer: Option<PathBuf>,
    /// Realized prices CSV: `date,hour,price`.
    pub realized_prices: Option<PathBuf>,
    /// Realized PV availability CSV: `date,hour,pv_kw`.
    pub realized_pv: Option<PathBuf>,
    pub device: DeviceConfig,
    pub states: usize,
    pub scenarios: usize,
    pub budget: f64,
    pub seed: u64,
    pub weights: WeightScheme,
    pub psm: PsmConfig,
    pub output: PathBuf,
    pub verify: bool,
    pub gap_tol: Option<f64>,
    pub trace: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            prices: None,
            load: None,
            pv_bounds: None,
            model: None,
            offer: None,
            realized_prices: None,
            realized_pv: None,
            device: DeviceConfig::default(),
            states: 5,
            scenarios: 25,
            budget: 6.0,
            seed: 7,
            weights: WeightScheme::default(),
            psm: PsmConfig::default(),
            output: PathBuf::from("out"),
            verify: false,
            gap_tol: None,
            trace: false,
        }
    }
}

/// Flags shared by every subcommand; each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON run configuration; relative paths inside it resolve against its directory.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Price history CSV (date,hour,price).
    #[arg(long)]
    pub prices: Option<PathBuf>,
    /// Load CSV (hour,kw).
    #[arg(long)]
    pub load: Option<PathBuf>,
    /// PV availability bounds CSV (hour,lower_kw,upper_kw).
    #[arg(long)]
    pub pv_bounds: Option<PathBuf>,
    /// Estimated model JSON; estimated from --prices when absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Offer surface CSV; defaults to offer.csv in the output directory.
    #[arg(long)]
    pub offer: Option<PathBuf>,
    /// Realized prices CSV (date,hour,price).
    #[arg(long)]
    pub realized_prices: Option<PathBuf>,
    /// Realized PV availability CSV (date,hour,pv_kw).
    #[arg(long)]
    pub realized_pv: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Sampling seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// PV uncertainty budget.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Number of sampled price scenarios.
    #[arg(long)]
    pub scenarios: Option<usize>,
    /// Price states per hour.
    #[arg(long)]
    pub states: Option<usize>,
    /// Solve the extensive form as a reference and report the gap.
    #[arg(long)]
    pub verify: bool,
    /// Fail with exit code 4 when the verified gap exceeds this.
    #[arg(long)]
    pub gap_tol: Option<f64>,
    /// Write the greedy oracle's iterates at the final offer.
    #[arg(long)]
    pub trace: bool,
    /// Subgradient iteration limit.
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Initial step size.
    #[arg(long)]
    pub step_initial: Option<f64>,
    /// Lower step safeguard.
    #[arg(long)]
    pub step_min: Option<f64>,
    /// Upper step safeguard.
    #[arg(long)]
    pub step_max: Option<f64>,
    /// Relative objective change that stops the solver.
    #[arg(long)]
    pub rel_tol: Option<f64>,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn load(overrides: &Overrides) -> CliResult<Self> {
        let mut cfg = match &overrides.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                let mut cfg: RunConfig = serde_json::from_str(&text)
                    .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
                let base = path.parent().unwrap_or(Path::new("."));
                for p in [
                    &mut cfg.prices,
                    &mut cfg.load,
                    &mut cfg.pv_bounds,
                    &mut cfg.model,
                    &mut cfg.offer,
                    &mut cfg.realized_prices,
                    &mut cfg.realized_pv,
                ] {
                    resolve(base, p);
                }
                if cfg.output.is_relative() {
                    cfg.output = base.join(&cfg.output);
                }
                cfg
            }
            None => RunConfig::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, o: &Overrides) {
        let paths = [
            (&mut self.prices, &o.prices),
            (&mut self.load, &o.load),
            (&mut self.pv_bounds, &o.pv_bounds),
            (&mut self.model, &o.model),
            (&mut self.offer, &o.offer),
            (&mut self.realized_prices, &o.realized_prices),
            (&mut self.realized_pv, &o.realized_pv),
        ];
        for (slot, flag) in paths {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        if let Some(out) = &o.out {
            self.output = out.clone();
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.gamma {
            self.budget = v;
        }
        if let Some(v) = o.scenarios {
            self.scenarios = v;
        }
        if let Some(v) = o.states {
            self.states = v;
        }
        self.verify |= o.verify;
        self.trace |= o.trace;
        if o.gap_tol.is_some() {
            self.gap_tol = o.gap_tol;
        }
        if let Some(v) = o.max_iterations {
            self.psm.max_iterations = v;
        }
        if let Some(v) = o.step_initial {
            self.psm.step_initial = v;
        }
        if let Some(v) = o.step_min {
            self.psm.step_min = v;
        }
        if let Some(v) = o.step_max {
            self.psm.step_max = v;
        }
        if let Some(v) = o.rel_tol {
            self.psm.rel_tol = v;
        }
    }

    fn validate(&self) -> CliResult<()> {
        if self.states == 0 {
            return Err(CliError::input("states must be at least 1"));
        }
        if self.scenarios == 0 {
            return Err(CliError::input("scenarios must be at least 1"));
        }
        if !(self.budget >= 0.0) {
            return Err(CliError::input(format!(
                "budget {} must be nonnegative",
                self.budget
            )));
        }
        if let Some(tol) = self.gap_tol {
            if !(tol > 0.0) {
                return Err(CliError::input(format!(
                    "gap tolerance {tol} must be positive"
                )));
            }
        }
        self.psm.validate()?;
        Ok(())
    }

    pub fn require<'a>(&self, path: &'a Option<PathBuf>, what: &str) -> CliResult<&'a Path> {
        path.as_deref().ok_or_else(|| {
            CliError::input(format!(
                "missing {what}: pass --{what} or set it in the config file"
            ))
        })
    }
}
