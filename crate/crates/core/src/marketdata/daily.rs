use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bars::BarSeries;
use super::{fmt_opt, DataError};

pub const SIGMA_FLOOR: f64 = 1e-4;
pub const SIGMA_CEIL: f64 = 2.0;
pub const TRAILING_DAYS: usize = 21;

pub const DAILY_COLUMNS: [&str; 12] = [
    "symbol",
    "date",
    "adv_21",
    "avg_trade_count_21",
    "avg_spread_21",
    "avg_depth_21",
    "vwap",
    "daily_volatility",
    "daily_vol_lag1",
    "daily_vol_5d",
    "trade_high",
    "trade_low",
];

/// Daily analytics for one symbol-day. Rolling fields look back over the
/// trailing 21 days including the current one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyStats {
    pub symbol: String,
    pub date: u32,
    /// Shares traded on this day alone.
    pub day_volume: f64,
    pub adv_21: f64,
    pub avg_trade_count_21: f64,
    pub avg_spread_21: f64,
    pub avg_depth_21: f64,
    pub vwap_day: Option<f64>,
    pub sigma_1: f64,
    pub sigma_2: f64,
    pub sigma_5: f64,
    pub trade_high_day: Option<f64>,
    pub trade_low_day: Option<f64>,
}

/// Parkinson high-low volatility over the last `w` entries of `highs`/`lows`.
pub fn parkinson_vol(highs: &[f64], lows: &[f64], w: usize) -> Result<f64, DataError> {
    if w == 0 || highs.len() != lows.len() || highs.len() < w {
        return Err(DataError::Domain(format!(
            "parkinson window {w} needs equal-length sequences of at least that length"
        )));
    }
    let n = highs.len();
    let mut acc = 0.0;
    for (h, l) in highs[n - w..].iter().zip(&lows[n - w..]) {
        if !(*l > 0.0) || h < l {
            return Err(DataError::Domain(format!("invalid high/low pair {h}/{l}")));
        }
        acc += (h / l).ln().powi(2);
    }
    Ok((acc / (4.0 * w as f64 * std::f64::consts::LN_2)).sqrt())
}

struct DayAggregate {
    volume: f64,
    trade_count: f64,
    spread: Option<f64>,
    depth: Option<f64>,
    vwap: Option<f64>,
    high: Option<f64>,
    low: Option<f64>,
}

fn aggregate(series: &BarSeries) -> DayAggregate {
    let mut volume = 0.0;
    let mut trade_count = 0.0;
    let (mut spread_sum, mut spread_n) = (0.0, 0usize);
    let (mut depth_sum, mut depth_n) = (0.0, 0usize);
    let (mut pv, mut vv) = (0.0, 0.0);
    let mut last = None;
    let mut high: Option<f64> = None;
    let mut low: Option<f64> = None;
    for b in &series.bars {
        volume += b.trade_volume;
        trade_count += b.trade_count;
        if let (Some(bid), Some(ask)) = (b.bid_price, b.ask_price) {
            spread_sum += ask - bid;
            spread_n += 1;
        }
        if let (Some(bs), Some(asz)) = (b.bid_size, b.ask_size) {
            depth_sum += (bs + asz) / 2.0;
            depth_n += 1;
        }
        if b.trade_volume > 0.0 {
            if let Some(v) = b.vwap {
                pv += v * b.trade_volume;
                vv += b.trade_volume;
            }
            if let Some(h) = b.trade_high {
                high = Some(high.map_or(h, |x| x.max(h)));
            }
            if let Some(l) = b.trade_low {
                low = Some(low.map_or(l, |x| x.min(l)));
            }
        }
        if b.trade_last.is_some() {
            last = b.trade_last;
        }
    }
    DayAggregate {
        volume,
        trade_count,
        spread: (spread_n > 0).then(|| spread_sum / spread_n as f64),
        depth: (depth_n > 0).then(|| depth_sum / depth_n as f64),
        vwap: if vv > 0.0 { Some(pv / vv) } else { last },
        high,
        low,
    }
}

fn trailing_mean(xs: impl Iterator<Item = Option<f64>>) -> f64 {
    let (s, n) = xs.flatten().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Computes daily analytics for one symbol's days, given in date order.
///
/// Windows at the start of history use whatever days are available. Days
/// without trades contribute a zero high-low range.
pub fn compute_daily_stats(days: &[&BarSeries]) -> Vec<DailyStats> {
    let aggs: Vec<DayAggregate> = days.iter().map(|s| aggregate(s)).collect();
    // Zero range on days without a usable high/low.
    let (highs, lows): (Vec<f64>, Vec<f64>) = aggs
        .iter()
        .map(|a| match (a.high, a.low) {
            (Some(h), Some(l)) if l > 0.0 && h >= l => (h, l),
            _ => (1.0, 1.0),
        })
        .unzip();

    let mut out = Vec::with_capacity(days.len());
    for (i, (series, agg)) in days.iter().zip(&aggs).enumerate() {
        let lo = (i + 1).saturating_sub(TRAILING_DAYS);
        let window = &aggs[lo..=i];
        let sigma = |w: usize| {
            let w = w.min(i + 1);
            parkinson_vol(&highs[..=i], &lows[..=i], w)
                .unwrap_or(0.0)
                .clamp(SIGMA_FLOOR, SIGMA_CEIL)
        };
        out.push(DailyStats {
            symbol: series.symbol.clone(),
            date: series.date,
            day_volume: agg.volume,
            adv_21: trailing_mean(window.iter().map(|a| Some(a.volume))),
            avg_trade_count_21: trailing_mean(window.iter().map(|a| Some(a.trade_count))),
            avg_spread_21: trailing_mean(window.iter().map(|a| a.spread)),
            avg_depth_21: trailing_mean(window.iter().map(|a| a.depth)),
            vwap_day: agg.vwap,
            sigma_1: sigma(1),
            sigma_2: sigma(2),
            sigma_5: sigma(5),
            trade_high_day: agg.high,
            trade_low_day: agg.low,
        });
    }
    out
}

/// Writes a symbol's daily-stats CSV.
pub fn write_daily_stats(path: &Path, rows: &[DailyStats]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| DataError::csv(path, e))?;
    w.write_record(DAILY_COLUMNS).map_err(|e| DataError::csv(path, e))?;
    for r in rows {
        w.write_record([
            r.symbol.clone(),
            r.date.to_string(),
            r.adv_21.to_string(),
            r.avg_trade_count_21.to_string(),
            r.avg_spread_21.to_string(),
            r.avg_depth_21.to_string(),
            fmt_opt(r.vwap_day),
            r.sigma_1.to_string(),
            r.sigma_2.to_string(),
            r.sigma_5.to_string(),
            fmt_opt(r.trade_high_day),
            fmt_opt(r.trade_low_day),
        ])
        .map_err(|e| DataError::csv(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}
