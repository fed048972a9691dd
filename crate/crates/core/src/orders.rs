//! Parent-order generation.
//!
//! Orders are drawn over retained symbols and the days available in a date
//! window. Horizon, start minute, size and side are sampled independently;
//! size is a fraction of the expected volume over the order's own horizon,
//! taken from the trailing intraday profile.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::impact::{CalibrationStore, ImpactForm, ImpactParams};
use crate::marketdata::{MarketDay, MarketUniverse};
use crate::SESSION_MINUTES;

#[derive(Debug, Error)]
pub enum OrderError {
    #[error("no retained symbol has data in {from}..={to}")]
    EmptyUniverse { from: u32, to: u32 },
    #[error("calendar overlap: {0}")]
    CalendarOverlap(String),
    #[error("invalid order config: {0}")]
    Config(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: u64, msg: String },
    #[error("orders file {path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Buy => 1.0,
            Side::Sell => -1.0,
        }
    }

    pub fn from_sign(s: i64) -> Option<Side> {
        match s {
            1 => Some(Side::Buy),
            -1 => Some(Side::Sell),
            _ => None,
        }
    }

    pub fn flip(self) -> Side {
        match self {
            Side::Buy => Side::Sell,
            Side::Sell => Side::Buy,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.sign() as i64)
    }
}

/// A parent order. `ehv_pct` and `adv_pct` are fractions (0.1 is 10%).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub id: u64,
    pub symbol: String,
    pub date: u32,
    pub start_minute: usize,
    pub horizon: usize,
    pub q0: f64,
    pub side: Side,
    pub ehv_pct: f64,
    pub adv_pct: f64,
    pub impact: ImpactParams,
}

impl Order {
    pub fn end_minute(&self) -> usize {
        self.start_minute + self.horizon
    }

    pub fn validate(&self) -> Result<(), OrderError> {
        let bad = |m: String| Err(OrderError::Config(format!("order {}: {m}", self.id)));
        if self.horizon == 0 || self.end_minute() > SESSION_MINUTES {
            return bad(format!("start {} + horizon {} exceeds the session", self.start_minute, self.horizon));
        }
        if !(self.q0 > 0.0 && self.q0.is_finite()) {
            return bad(format!("q0 must be positive, got {}", self.q0));
        }
        self.impact.validate().map_err(|e| OrderError::Config(format!("order {}: {e}", self.id)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizeShape {
    LogUniform,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderGenConfig {
    pub n_orders: usize,
    /// Inclusive YYYYMMDD window.
    pub date_from: u32,
    pub date_to: u32,
    #[serde(default = "default_ehv_range")]
    pub ehv_pct_range: [f64; 2],
    #[serde(default = "default_shape")]
    pub ehv_shape: SizeShape,
    #[serde(default = "default_horizon_range")]
    pub horizon_range: [usize; 2],
    #[serde(default = "default_buy_probability")]
    pub buy_probability: f64,
    pub seed: u64,
    /// Window this run is allowed to draw from (for example the training
    /// period); a date range outside it is rejected.
    #[serde(default)]
    pub calendar_bound: Option<[u32; 2]>,
}

fn default_ehv_range() -> [f64; 2] {
    [0.005, 0.20]
}
fn default_shape() -> SizeShape {
    SizeShape::LogUniform
}
fn default_horizon_range() -> [usize; 2] {
    [1, SESSION_MINUTES]
}
fn default_buy_probability() -> f64 {
    0.5
}

impl OrderGenConfig {
    pub fn new(n_orders: usize, date_from: u32, date_to: u32, seed: u64) -> Self {
        OrderGenConfig {
            n_orders,
            date_from,
            date_to,
            ehv_pct_range: default_ehv_range(),
            ehv_shape: default_shape(),
            horizon_range: default_horizon_range(),
            buy_probability: default_buy_probability(),
            seed,
            calendar_bound: None,
        }
    }

    pub fn validate(&self) -> Result<(), OrderError> {
        let bad = |m: String| Err(OrderError::Config(m));
        if self.date_from > self.date_to {
            return bad(format!("empty date range {}..={}", self.date_from, self.date_to));
        }
        let [lo, hi] = self.ehv_pct_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("ehv_pct_range must satisfy 0 < lo <= hi, got [{lo}, {hi}]"));
        }
        let [hlo, hhi] = self.horizon_range;
        if !(1 <= hlo && hlo <= hhi && hhi <= SESSION_MINUTES) {
            return bad(format!("horizon_range must lie in 1..={SESSION_MINUTES}, got [{hlo}, {hhi}]"));
        }
        if !(0.0..=1.0).contains(&self.buy_probability) {
            return bad(format!("buy_probability {} outside [0, 1]", self.buy_probability));
        }
        if let Some([a, b]) = self.calendar_bound {
            if self.date_from < a || self.date_to > b {
                return Err(OrderError::CalendarOverlap(format!(
                    "order dates {}..={} fall outside the permitted window {a}..={b}",
                    self.date_from, self.date_to
                )));
            }
        }
        Ok(())
    }
}

/// Non-overlapping train and test periods, train strictly first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalendarSplit {
    pub train: [u32; 2],
    pub test: [u32; 2],
}

impl CalendarSplit {
    pub fn validate(&self) -> Result<(), OrderError> {
        let [a, b] = self.train;
        let [c, d] = self.test;
        if a > b || c > d {
            return Err(OrderError::Config("train and test ranges must be non-empty".into()));
        }
        if b >= c {
            return Err(OrderError::CalendarOverlap(format!(
                "train {a}..={b} must end strictly before test {c}..={d}"
            )));
        }
        Ok(())
    }
}

fn sample_size(rng: &mut ChaCha8Rng, cfg: &OrderGenConfig) -> f64 {
    let [lo, hi] = cfg.ehv_pct_range;
    if lo == hi {
        return lo;
    }
    let u: f64 = rng.random();
    match cfg.ehv_shape {
        SizeShape::LogUniform => (lo.ln() + u * (hi.ln() - lo.ln())).exp(),
        SizeShape::Uniform => lo + u * (hi - lo),
    }
}

/// Draws `n_orders` orders over retained symbols with data in the window.
/// Orders get consecutive ids from zero and the calibrated parameters of
/// their symbol.
pub fn generate_orders(
    cfg: &OrderGenConfig,
    universe: &MarketUniverse,
    store: &CalibrationStore,
) -> Result<Vec<Order>, OrderError> {
    cfg.validate()?;
    let days: Vec<(&MarketDay, ImpactParams)> = store
        .retained()
        .filter_map(|rec| universe.days_of(&rec.symbol).map(|d| (d, rec.params)))
        .flat_map(|(d, p)| d.range(cfg.date_from..=cfg.date_to).map(move |(_, day)| (day, p)))
        .collect();
    if days.is_empty() {
        return Err(OrderError::EmptyUniverse { from: cfg.date_from, to: cfg.date_to });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.n_orders);
    let mut attempts = 0usize;
    while out.len() < cfg.n_orders {
        attempts += 1;
        if attempts > 100 * cfg.n_orders.max(1) {
            return Err(OrderError::Config("could not find days with positive expected volume".into()));
        }
        let (day, impact) = days[rng.random_range(0..days.len())];
        let horizon = rng.random_range(cfg.horizon_range[0]..=cfg.horizon_range[1]);
        let start_minute = rng.random_range(0..=SESSION_MINUTES - horizon);
        let ehv_pct = sample_size(&mut rng, cfg);
        let side = if rng.random::<f64>() < cfg.buy_probability { Side::Buy } else { Side::Sell };
        let ehv = day.expected_volume(start_minute, start_minute + horizon);
        if !(ehv > 0.0) {
            continue;
        }
        let q0 = ehv_pct * ehv;
        let adv_pct = if day.stats.adv_21 > 0.0 { q0 / day.stats.adv_21 } else { 0.0 };
        out.push(Order {
            id: out.len() as u64,
            symbol: day.symbol.clone(),
            date: day.date,
            start_minute,
            horizon,
            q0,
            side,
            ehv_pct,
            adv_pct,
            impact,
        });
    }
    Ok(out)
}

pub const ORDER_COLUMNS: [&str; 13] = [
    "id",
    "symbol",
    "date",
    "start_minute",
    "horizon",
    "q0",
    "side",
    "ehv_pct",
    "adv_pct",
    "g0",
    "tau",
    "gamma",
    "form",
];

pub fn write_orders(path: &Path, orders: &[Order]) -> Result<(), OrderError> {
    let err = |e: csv::Error| OrderError::Io { path: path.display().to_string(), msg: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(ORDER_COLUMNS).map_err(err)?;
    for o in orders {
        w.write_record([
            o.id.to_string(),
            o.symbol.clone(),
            o.date.to_string(),
            o.start_minute.to_string(),
            o.horizon.to_string(),
            o.q0.to_string(),
            o.side.to_string(),
            o.ehv_pct.to_string(),
            o.adv_pct.to_string(),
            o.impact.g0.to_string(),
            o.impact.tau.to_string(),
            o.impact.gamma.to_string(),
            o.impact.form.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| OrderError::Io { path: path.display().to_string(), msg: e.to_string() })
}

pub fn read_orders(path: &Path) -> Result<Vec<Order>, OrderError> {
    let p = path.display().to_string();
    let parse = |line: u64, msg: String| OrderError::Parse { path: p.clone(), line, msg };
    let mut r = csv::Reader::from_path(path).map_err(|e| OrderError::Io { path: p.clone(), msg: e.to_string() })?;
    let headers = r.headers().map_err(|e| parse(1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ORDER_COLUMNS {
        return Err(parse(1, format!("expected columns {ORDER_COLUMNS:?}")));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| parse(0, e.to_string()))?;
        let line = rec.position().map_or(0, |pos| pos.line());
        let field = |i: usize| -> Result<&str, OrderError> { Ok(&rec[i]) };
        macro_rules! num {
            ($i:expr, $t:ty) => {
                field($i)?.parse::<$t>().map_err(|e| parse(line, format!("{}: {e}", ORDER_COLUMNS[$i])))?
            };
        }
        let side_raw = num!(6, i64);
        let side = Side::from_sign(side_raw).ok_or_else(|| parse(line, format!("side must be 1 or -1, got {side_raw}")))?;
        let form: ImpactForm = rec[12].parse().map_err(|e: crate::impact::ImpactError| parse(line, e.to_string()))?;
        let order = Order {
            id: num!(0, u64),
            symbol: rec[1].to_string(),
            date: num!(2, u32),
            start_minute: num!(3, usize),
            horizon: num!(4, usize),
            q0: num!(5, f64),
            side,
            ehv_pct: num!(7, f64),
            adv_pct: num!(8, f64),
            impact: ImpactParams { g0: num!(9, f64), tau: num!(10, f64), gamma: num!(11, f64), beta: form.beta(), form },
        };
        order.validate().map_err(|e| parse(line, e.to_string()))?;
        out.push(order);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impact::StoreRecord;
    use crate::marketdata::{synth_generate, SynthConfig};

    fn fixture() -> (MarketUniverse, CalibrationStore) {
        let cfg = SynthConfig { n_symbols: 3, n_days: 5, ..SynthConfig::default() };
        let universe = MarketUniverse::from_bars(&synth_generate(&cfg).unwrap());
        let mut store = CalibrationStore::default();
        for (i, s) in universe.symbols().enumerate() {
            store.insert(StoreRecord {
                symbol: s.to_string(),
                params: ImpactParams::new(ImpactForm::Sqrt, 1e-4, 0.5, 6.0).unwrap(),
                r2_bar: 0.05,
                retained: i != 2,
            });
        }
        (universe, store)
    }

    #[test]
    fn deterministic_and_valid() {
        let (u, s) = fixture();
        let cfg = OrderGenConfig::new(300, 20220101, 20221231, 3);
        let a = generate_orders(&cfg, &u, &s).unwrap();
        assert_eq!(a, generate_orders(&cfg, &u, &s).unwrap());
        assert_eq!(a.len(), 300);
        for o in &a {
            o.validate().unwrap();
            assert!(o.end_minute() <= SESSION_MINUTES);
            assert!(s.get(&o.symbol).unwrap().retained);
            let day = u.day(&o.symbol, o.date).unwrap();
            let ehv = day.expected_volume(o.start_minute, o.end_minute());
            assert!((o.q0 - o.ehv_pct * ehv).abs() <= 1e-9 * o.q0);
            assert!((0.005..=0.2).contains(&o.ehv_pct));
        }
    }

    #[test]
    fn calendar_bound_enforced() {
        let (u, s) = fixture();
        let mut cfg = OrderGenConfig::new(10, 20221001, 20221231, 1);
        cfg.calendar_bound = Some([20220101, 20220930]);
        assert!(matches!(generate_orders(&cfg, &u, &s), Err(OrderError::CalendarOverlap(_))));
        let split = CalendarSplit { train: [20220101, 20221001], test: [20221001, 20221231] };
        assert!(matches!(split.validate(), Err(OrderError::CalendarOverlap(_))));
        let ok = CalendarSplit { train: [20220101, 20220930], test: [20221001, 20221231] };
        ok.validate().unwrap();
    }

    #[test]
    fn empty_retained_universe_is_an_error() {
        let (u, mut s) = fixture();
        s.records.values_mut().for_each(|r| r.retained = false);
        let cfg = OrderGenConfig::new(10, 20220101, 20221231, 1);
        assert!(matches!(generate_orders(&cfg, &u, &s), Err(OrderError::EmptyUniverse { .. })));
    }

    #[test]
    fn sides_balanced() {
        let (u, s) = fixture();
        let cfg = OrderGenConfig::new(10_000, 20220101, 20221231, 11);
        let orders = generate_orders(&cfg, &u, &s).unwrap();
        let buys = orders.iter().filter(|o| o.side == Side::Buy).count() as f64;
        let n = orders.len() as f64;
        // Binomial(n, 1/2): 3 sigma = 1.5 sqrt(n).
        assert!((buys - n / 2.0).abs() <= 1.5 * n.sqrt());
    }

    #[test]
    fn csv_round_trip() {
        let (u, s) = fixture();
        let orders = generate_orders(&OrderGenConfig::new(20, 20220101, 20221231, 5), &u, &s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("orders.csv");
        write_orders(&path, &orders).unwrap();
        assert_eq!(read_orders(&path).unwrap(), orders);
    }
}
