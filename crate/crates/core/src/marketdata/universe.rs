use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bars::{BarSeries, SeriesStatus};
use super::clean::{clean_symbol, SymbolCleanReport};
use super::daily::{compute_daily_stats, DailyStats, TRAILING_DAYS};
use super::SymbolDays;
use crate::SESSION_MINUTES;

/// Simulator view of one minute. Prices are always populated: mids are
/// forward-filled (back-filled at the open) and the fill reference falls
/// back to the mid on minutes without trades.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinuteView {
    pub volume: f64,
    pub vwap: f64,
    pub mid: f64,
    pub mid_return: Option<f64>,
    pub imbalance: Option<f64>,
}

/// One symbol-day ready for simulation: 390 minute views, the day's
/// analytics and the trailing intraday volume profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketDay {
    pub symbol: String,
    pub date: u32,
    pub minutes: Vec<MinuteView>,
    pub stats: DailyStats,
    /// Mean volume per minute over the trailing 21 days (this day included).
    pub profile: Vec<f64>,
}

impl MarketDay {
    /// Builds a day from explicit minute views. `minutes` and `profile`
    /// must both cover the full session.
    pub fn from_minutes(
        symbol: impl Into<String>,
        date: u32,
        minutes: Vec<MinuteView>,
        stats: DailyStats,
        profile: Vec<f64>,
    ) -> Self {
        assert_eq!(minutes.len(), SESSION_MINUTES, "minutes must cover the session");
        assert_eq!(profile.len(), SESSION_MINUTES, "profile must cover the session");
        MarketDay { symbol: symbol.into(), date, minutes, stats, profile }
    }

    /// A day with a given mid path and volumes, fills at the mid, and a
    /// profile equal to the realised volumes. Handy for controlled worlds.
    pub fn from_path(symbol: &str, date: u32, mids: &[f64], volumes: &[f64], sigma_daily: f64) -> Self {
        assert_eq!(mids.len(), SESSION_MINUTES, "mids must cover the session");
        assert_eq!(volumes.len(), SESSION_MINUTES, "volumes must cover the session");
        let minutes = mids
            .iter()
            .zip(volumes)
            .enumerate()
            .map(|(t, (m, v))| MinuteView {
                volume: *v,
                vwap: *m,
                mid: *m,
                mid_return: (t > 0).then(|| m / mids[t - 1] - 1.0),
                imbalance: None,
            })
            .collect();
        let day_volume: f64 = volumes.iter().sum();
        let stats = DailyStats {
            symbol: symbol.to_string(),
            date,
            day_volume,
            adv_21: day_volume,
            avg_trade_count_21: 0.0,
            avg_spread_21: 0.0,
            avg_depth_21: 0.0,
            vwap_day: None,
            sigma_1: sigma_daily,
            sigma_2: sigma_daily,
            sigma_5: sigma_daily,
            trade_high_day: None,
            trade_low_day: None,
        };
        MarketDay::from_minutes(symbol, date, minutes, stats, volumes.to_vec())
    }

    /// Expected volume over minutes `[from, to)`.
    pub fn expected_volume(&self, from: usize, to: usize) -> f64 {
        self.profile[from.min(to)..to].iter().sum()
    }

    /// Market VWAP over minutes `[from, to)`; the mean mid if nothing traded.
    pub fn market_vwap(&self, from: usize, to: usize) -> f64 {
        let slice = &self.minutes[from..to];
        let vol: f64 = slice.iter().map(|m| m.volume).sum();
        if vol > 0.0 {
            slice.iter().map(|m| m.vwap * m.volume).sum::<f64>() / vol
        } else {
            slice.iter().map(|m| m.mid).sum::<f64>() / slice.len() as f64
        }
    }
}

fn minute_views(series: &BarSeries) -> Option<Vec<MinuteView>> {
    let dense = series.dense();
    let first_mid = dense.iter().flatten().find_map(|b| b.mid_price)?;
    let mut last_mid = first_mid;
    Some(
        dense
            .iter()
            .map(|slot| {
                let (volume, mid, vwap, ret, imb) = match slot {
                    Some(b) => {
                        let mid = b.mid_price.unwrap_or(last_mid);
                        let vwap = if b.trade_volume > 0.0 { b.vwap.unwrap_or(mid) } else { mid };
                        (b.trade_volume, mid, vwap, b.mid_return, b.trade_imbalance)
                    }
                    None => (0.0, last_mid, last_mid, None, None),
                };
                last_mid = mid;
                MinuteView { volume, vwap, mid, mid_return: ret, imbalance: imb }
            })
            .collect(),
    )
}

/// Cleaned and analysed market data, keyed by symbol then date.
#[derive(Debug, Clone, Default)]
pub struct MarketUniverse {
    days: BTreeMap<String, BTreeMap<u32, MarketDay>>,
    pub clean_reports: Vec<SymbolCleanReport>,
}

impl MarketUniverse {
    /// Cleans raw bars, drops symbols over the missing-value ceiling, and
    /// computes analytics and profiles for the rest.
    pub fn from_bars(raw: &SymbolDays) -> Self {
        let built: Vec<(SymbolCleanReport, BTreeMap<u32, MarketDay>)> = raw
            .par_iter()
            .map(|(symbol, days)| {
                let (cleaned, report) = clean_symbol(symbol, days);
                if report.dropped {
                    return (report, BTreeMap::new());
                }
                let series: Vec<&BarSeries> =
                    cleaned.values().filter(|s| s.status == SeriesStatus::Ok).collect();
                let stats = compute_daily_stats(&series);
                let volumes: Vec<Vec<f64>> = series
                    .iter()
                    .map(|s| {
                        let mut v = vec![0.0; SESSION_MINUTES];
                        for b in &s.bars {
                            v[usize::from(b.time)] = b.trade_volume;
                        }
                        v
                    })
                    .collect();
                let mut out = BTreeMap::new();
                for (i, (s, st)) in series.iter().zip(stats).enumerate() {
                    let lo = (i + 1).saturating_sub(TRAILING_DAYS);
                    let n = (i + 1 - lo) as f64;
                    let profile = (0..SESSION_MINUTES)
                        .map(|t| volumes[lo..=i].iter().map(|v| v[t]).sum::<f64>() / n)
                        .collect();
                    if let Some(minutes) = minute_views(s) {
                        out.insert(s.date, MarketDay { symbol: symbol.clone(), date: s.date, minutes, stats: st, profile });
                    }
                }
                (report, out)
            })
            .collect();
        let mut universe = MarketUniverse::default();
        for (report, days) in built {
            if !days.is_empty() {
                universe.days.insert(report.symbol.clone(), days);
            }
            universe.clean_reports.push(report);
        }
        universe
    }

    pub fn insert_day(&mut self, day: MarketDay) {
        self.days.entry(day.symbol.clone()).or_default().insert(day.date, day);
    }

    pub fn day(&self, symbol: &str, date: u32) -> Option<&MarketDay> {
        self.days.get(symbol)?.get(&date)
    }

    pub fn symbols(&self) -> impl Iterator<Item = &str> {
        self.days.keys().map(String::as_str)
    }

    pub fn days_of(&self, symbol: &str) -> Option<&BTreeMap<u32, MarketDay>> {
        self.days.get(symbol)
    }

    pub fn iter_days(&self) -> impl Iterator<Item = &MarketDay> {
        self.days.values().flat_map(|d| d.values())
    }

    pub fn daily_stats(&self, symbol: &str) -> Vec<DailyStats> {
        self.days
            .get(symbol)
            .map(|d| d.values().map(|m| m.stats.clone()).collect())
            .unwrap_or_default()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marketdata::{synth_generate, SynthConfig};

    #[test]
    fn universe_from_synth_has_dense_days() {
        let cfg = SynthConfig { n_symbols: 2, n_days: 4, ..SynthConfig::default() };
        let u = MarketUniverse::from_bars(&synth_generate(&cfg).unwrap());
        assert_eq!(u.symbols().count(), 2);
        for d in u.iter_days() {
            assert_eq!(d.minutes.len(), SESSION_MINUTES);
            assert!(d.profile.iter().all(|v| *v > 0.0));
            assert!(d.stats.adv_21 > 0.0);
        }
        let first = u.days_of("S000").unwrap().values().next().unwrap();
        // Single-day history: profile equals that day's volumes.
        for (p, m) in first.profile.iter().zip(&first.minutes) {
            assert_eq!(*p, m.volume);
        }
    }
}
