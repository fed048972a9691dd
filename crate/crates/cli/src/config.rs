//! The run configuration file.

use std::path::{Path, PathBuf};

use geo_exec::engine::RewardWeights;
use geo_exec::impact::{ImpactForm, ImpactParams, CALIBRATION_GAMMA, DEFAULT_LAGS};
use geo_exec::mapelites::QdConfig;
use geo_exec::marketdata::SynthConfig;
use geo_exec::orders::{CalendarSplit, OrderGenConfig, SizeShape};
use geo_exec::ppo::TrainConfig;
use geo_exec::seeding::derive_seed;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; every component seed is derived from it.
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; 0 means one per logical core.
    pub workers: usize,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub calibration: CalibrationConfig,
    pub split: CalendarSplit,
    pub orders: OrdersConfig,
    pub reward: RewardWeights,
    pub ppo: TrainConfig,
    pub qd: QdConfig,
    pub report: ReportConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Root of a `<SYMBOL>/<YYYYMMDD>.csv` bar tree. Unset means the tree
    /// written by `synth` under the output directory.
    pub bars: Option<PathBuf>,
    pub symbols: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub lags: Vec<usize>,
    pub folds: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig { lags: DEFAULT_LAGS.to_vec(), folds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrdersConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub ehv_pct_range: [f64; 2],
    pub ehv_shape: SizeShape,
    pub horizon_range: [usize; 2],
    pub buy_probability: f64,
}

impl Default for OrdersConfig {
    fn default() -> Self {
        let d = OrderGenConfig::new(0, 0, 0, 0);
        OrdersConfig {
            n_train: 2000,
            n_test: 500,
            ehv_pct_range: d.ehv_pct_range,
            ehv_shape: d.ehv_shape,
            horizon_range: d.horizon_range,
            buy_probability: d.buy_probability,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub winsor_lo: f64,
    pub winsor_hi: f64,
    /// Order traced in `plotdata/order_anatomy.csv`; lowest id if unset.
    pub anatomy_order: Option<u64>,
    /// Sample PPO actions during evaluation instead of taking the mode.
    pub stochastic_policy: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig { winsor_lo: 0.01, winsor_hi: 0.99, anatomy_order: None, stochastic_policy: false }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            out: PathBuf::from("runs/default"),
            workers: 0,
            data: DataConfig::default(),
            synth: SynthConfig {
                n_symbols: 8,
                n_days: 60,
                daily_vol_range: [0.002, 0.004],
                planted_impact: Some(
                    ImpactParams::new(ImpactForm::Sqrt, CALIBRATION_GAMMA, 0.5, 6.0).expect("valid planted impact"),
                ),
                ..SynthConfig::default()
            },
            calibration: CalibrationConfig::default(),
            split: CalendarSplit { train: [20220101, 20220228], test: [20220301, 20221231] },
            orders: OrdersConfig::default(),
            reward: RewardWeights::default(),
            ppo: TrainConfig::default(),
            qd: QdConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(RunConfig::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::missing(path, e))?;
        let bad = |e: &dyn std::fmt::Display| CliError::Config(format!("{}: {e}", path.display()));
        let user: toml::Table = toml::from_str(&text).map_err(|e| bad(&e))?;
        // Sections given only in part keep the run defaults for the rest,
        // which can differ from the component's own defaults.
        let mut merged = toml::Table::try_from(RunConfig::default()).map_err(|e| bad(&e))?;
        merge(&mut merged, user);
        merged.try_into().map_err(|e| bad(&e))
    }

    /// Applies command-line overrides and fans the global seed out to each
    /// component.
    pub fn resolve(mut self, out: Option<PathBuf>, seed: Option<u64>, workers: Option<usize>) -> Result<Self, CliError> {
        if let Some(o) = out {
            self.out = o;
        }
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(w) = workers {
            self.workers = w;
        }
        if self.workers == 0 {
            self.workers = std::thread::available_parallelism().map_or(1, |n| n.get());
        }
        self.synth.seed = derive_seed(self.seed, "synth");
        self.ppo.seed = derive_seed(self.seed, "ppo");
        self.ppo.workers = self.workers;
        self.qd.seed = derive_seed(self.seed, "map-elites");
        self.qd.workers = self.workers;
        self.split.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let r = &self.report;
        if !(0.0 <= r.winsor_lo && r.winsor_lo <= r.winsor_hi && r.winsor_hi <= 1.0) {
            return Err(CliError::Config(format!("winsor limits ({}, {}) are not ordered in [0, 1]", r.winsor_lo, r.winsor_hi)));
        }
        Ok(self)
    }

    pub fn order_gen(&self, n: usize, window: [u32; 2], label: &str) -> OrderGenConfig {
        let o = &self.orders;
        OrderGenConfig {
            n_orders: n,
            date_from: window[0],
            date_to: window[1],
            ehv_pct_range: o.ehv_pct_range,
            ehv_shape: o.ehv_shape,
            horizon_range: o.horizon_range,
            buy_probability: o.buy_probability,
            seed: derive_seed(self.seed, label),
            calendar_bound: Some(window),
        }
    }

    /// Seed for the episode streams of strategy runs.
    pub fn episode_seed(&self) -> u64 {
        derive_seed(self.seed, "episodes")
    }

    pub fn bars_dir(&self) -> PathBuf {
        self.data.bars.clone().unwrap_or_else(|| self.out.join("synth").join("bars"))
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.out.join(stage)
    }

    /// Writes `resolved_config.toml` into `dir`.
    pub fn write_provenance(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let text = toml::to_string(self).map_err(|e| CliError::Failed(format!("serialising config: {e}")))?;
        let path = dir.join("resolved_config.toml");
        std::fs::write(&path, format!("# global seed {}\n{text}", self.seed)).map_err(|e| CliError::io(&path, e))
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
