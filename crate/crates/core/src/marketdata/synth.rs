//! Synthetic minute-bar universe with the same schema as the vendor data.
//!
//! Mid returns are Gaussian at `sigma_daily / sqrt(390)` per minute. When an
//! impact model is planted, the sided-volume imbalance of each minute acts as
//! an exogenous trader's signed participation and feeds the returns of later
//! minutes through the exponential propagator, so calibration on the output
//! can recover the planted parameters.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bars::{write_bar_file, BarSeries, MinuteBar};
use super::{DataError, SymbolDays};
use crate::impact::{signed_instant_impact, ImpactParams};
use crate::seeding::derive_indexed;
use crate::SESSION_MINUTES;

/// Share of each minute's volume with a known aggressor side.
const SIDED_SHARE: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_symbols: usize,
    pub n_days: usize,
    pub base_price: f64,
    pub daily_vol_range: [f64; 2],
    pub adv_range: [f64; 2],
    /// Curvature of the quadratic intraday volume profile; 0 is flat.
    pub u_shape_strength: f64,
    #[serde(default)]
    pub planted_impact: Option<ImpactParams>,
    pub seed: u64,
    #[serde(default = "default_start_date")]
    pub start_date: u32,
    /// Log-normal dispersion of per-minute volume around the profile.
    #[serde(default = "default_volume_noise")]
    pub volume_noise: f64,
}

fn default_start_date() -> u32 {
    20220103
}

fn default_volume_noise() -> f64 {
    0.25
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_symbols: 8,
            n_days: 60,
            base_price: 50.0,
            daily_vol_range: [0.008, 0.03],
            adv_range: [2e5, 5e6],
            u_shape_strength: 2.0,
            planted_impact: None,
            seed: 7,
            start_date: default_start_date(),
            volume_noise: default_volume_noise(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Config(m.to_string()));
        if self.n_symbols == 0 || self.n_days == 0 {
            return bad("n_symbols and n_days must be positive");
        }
        if !(self.base_price > 0.0) {
            return bad("base_price must be positive");
        }
        for (name, [lo, hi]) in [("daily_vol_range", self.daily_vol_range), ("adv_range", self.adv_range)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(DataError::Config(format!("{name} must satisfy 0 < lo <= hi, got [{lo}, {hi}]")));
            }
        }
        if !(self.u_shape_strength >= 0.0) || !(self.volume_noise >= 0.0) {
            return bad("u_shape_strength and volume_noise must be non-negative");
        }
        if date_from_int(self.start_date).is_none() {
            return bad("start_date is not a valid YYYYMMDD date");
        }
        Ok(())
    }
}

fn date_from_int(d: u32) -> Option<NaiveDate> {
    NaiveDate::from_ymd_opt((d / 10000) as i32, (d / 100) % 100, d % 100)
}

fn date_to_int(d: NaiveDate) -> u32 {
    d.year() as u32 * 10000 + d.month() * 100 + d.day()
}

/// `n` consecutive weekdays starting at (or after) `start`.
pub fn trading_dates(start: u32, n: usize) -> Vec<u32> {
    let mut d = date_from_int(start).expect("valid start date");
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(date_to_int(d));
        }
        d += Duration::days(1);
    }
    out
}

fn log_uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        return lo;
    }
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Quadratic U-shaped intraday weights summing to one.
fn intraday_weights(strength: f64) -> Vec<f64> {
    let centre = (SESSION_MINUTES as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..SESSION_MINUTES)
        .map(|t| 1.0 + strength * ((t as f64 - centre) / centre).powi(2))
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

fn generate_symbol(cfg: &SynthConfig, index: usize, dates: &[u32]) -> (String, BTreeMap<u32, BarSeries>) {
    let symbol = format!("S{index:03}");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(cfg.seed, "synth-symbol", index as u64));
    let sigma_daily = log_uniform(&mut rng, cfg.daily_vol_range);
    let adv = log_uniform(&mut rng, cfg.adv_range);
    let mut mid = cfg.base_price * (0.3 * normal(&mut rng)).exp();
    let rel_spread = (2e-4 * (1e7 / adv).powf(0.25)).clamp(1e-4, 5e-3);
    let weights = intraday_weights(cfg.u_shape_strength);
    let sigma_min = sigma_daily / (SESSION_MINUTES as f64).sqrt();
    let noise = cfg.volume_noise;

    let mut days = BTreeMap::new();
    for &date in dates {
        let day_mult = (0.2 * normal(&mut rng)).exp();
        let mut acc = 0.0;
        let mut bars = Vec::with_capacity(SESSION_MINUTES);
        for (t, w) in weights.iter().enumerate() {
            let lognormal = (noise * normal(&mut rng) - noise * noise / 2.0).exp();
            let volume = (adv * day_mult * w * lognormal).round().max(1.0);
            let y: f64 = rng.random_range(-1.0..=1.0);
            let buy = (volume * SIDED_SHARE * (1.0 + y) / 2.0).floor();
            let sell = (volume * SIDED_SHARE * (1.0 - y) / 2.0).floor();
            let unsided = (volume * (1.0 - SIDED_SHARE)).floor();
            let imbalance = (buy - sell) / volume;

            let prev_mid = mid;
            if t > 0 {
                mid *= 1.0 + sigma_min * normal(&mut rng) + acc;
            }
            if let Some(p) = &cfg.planted_impact {
                acc = (acc + p.g0 * signed_instant_impact(imbalance, p)) * (-1.0 / p.tau).exp();
            }

            let lo0 = prev_mid.min(mid);
            let hi0 = prev_mid.max(mid);
            let vwap = lo0 + rng.random::<f64>() * (hi0 - lo0);
            let high = hi0 * (1.0 + 0.25 * sigma_min * normal(&mut rng).abs());
            let low = lo0 * (1.0 - 0.25 * sigma_min * normal(&mut rng).abs());
            let depth = (adv / SESSION_MINUTES as f64 * 0.05).max(1.0);

            let mut bar = MinuteBar::empty(t as u16);
            bar.trade_count = (volume / 100.0).round().max(1.0);
            bar.trade_volume = volume;
            bar.hid_vol = (0.1 * volume).floor();
            bar.unsided_vol = unsided;
            bar.sell_vol = sell;
            bar.buy_vol = buy;
            bar.bid_price = Some(mid * (1.0 - rel_spread / 2.0));
            bar.ask_price = Some(mid * (1.0 + rel_spread / 2.0));
            bar.bid_size = Some((depth * (0.5 * normal(&mut rng)).exp()).round().max(1.0));
            bar.ask_size = Some((depth * (0.5 * normal(&mut rng)).exp()).round().max(1.0));
            bar.trade_last = Some(mid.clamp(low, high));
            bar.trade_high = Some(high);
            bar.trade_low = Some(low);
            bar.vwap = Some(vwap.clamp(low, high));
            bar.derive();
            debug_assert!((bar.trade_imbalance.unwrap() - imbalance).abs() < 1e-12);
            bars.push(bar);
        }
        days.insert(date, BarSeries::new(symbol.clone(), date, bars));
    }
    (symbol, days)
}

/// Generates a deterministic synthetic universe.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SymbolDays, DataError> {
    cfg.validate()?;
    let dates = trading_dates(cfg.start_date, cfg.n_days);
    let out: Vec<(String, BTreeMap<u32, BarSeries>)> =
        (0..cfg.n_symbols).into_par_iter().map(|i| generate_symbol(cfg, i, &dates)).collect();
    Ok(out.into_iter().collect())
}

/// Writes `<root>/<SYMBOL>/<YYYYMMDD>.csv` for every series.
pub fn write_bar_tree(root: &Path, data: &SymbolDays) -> Result<(), DataError> {
    for (symbol, days) in data {
        let dir = root.join(symbol);
        fs::create_dir_all(&dir).map_err(|e| DataError::io(&dir, e))?;
        for (date, series) in days {
            write_bar_file(&dir.join(format!("{date}.csv")), series)?;
        }
    }
    Ok(())
}
