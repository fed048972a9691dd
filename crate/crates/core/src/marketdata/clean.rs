use std::collections::BTreeMap;

use super::bars::{BarSeries, MinuteBar, SeriesStatus};
use crate::SESSION_MINUTES;

/// One-minute mid returns with larger magnitude are masked.
pub const RETURN_OUTLIER: f64 = 0.10;
/// Symbols with a larger fraction of missing minutes are dropped.
pub const MISSING_CEILING: f64 = 0.07;
/// Window (minutes) of the rolling return volatility.
const VOL_WINDOW: usize = 21;

/// Session minutes without a quoted row (absent row or empty bid/ask).
pub fn missing_minutes(series: &BarSeries) -> usize {
    SESSION_MINUTES - series.bars.iter().filter(|b| b.has_quotes()).count()
}

/// Cleans one symbol-day.
///
/// Single-minute quote gaps are forward-filled from the previous minute,
/// minutes without trades are flagged, and returns above
/// [`RETURN_OUTLIER`] are masked. The dropped status is decided per symbol
/// by [`clean_symbol`]; this function leaves it untouched.
pub fn clean_bars(series: &BarSeries) -> BarSeries {
    let mut slots: Vec<Option<MinuteBar>> = vec![None; SESSION_MINUTES];
    for b in &series.bars {
        slots[usize::from(b.time)] = Some(b.clone());
    }
    let quoted: Vec<bool> = slots.iter().map(|s| s.as_ref().is_some_and(MinuteBar::has_quotes)).collect();

    for t in 1..SESSION_MINUTES - 1 {
        if quoted[t] || !quoted[t - 1] || !quoted[t + 1] {
            continue;
        }
        let prev = slots[t - 1].clone().expect("quoted slot");
        let bar = slots[t].get_or_insert_with(|| MinuteBar::empty(t as u16));
        bar.bid_price = prev.bid_price;
        bar.ask_price = prev.ask_price;
        if bar.bid_size.is_none() {
            bar.bid_size = prev.bid_size;
        }
        if bar.ask_size.is_none() {
            bar.ask_size = prev.ask_size;
        }
        bar.flags.quote_filled = true;
    }

    let mut bars: Vec<MinuteBar> = slots.into_iter().flatten().collect();
    let mut prev_mid: Option<(u16, f64)> = None;
    for bar in bars.iter_mut() {
        bar.derive();
        bar.flags.no_trades = !bar.has_trades();
        bar.flags.return_masked = false;
        bar.mid_return = None;
        if let (Some((pt, pm)), Some(m)) = (prev_mid, bar.mid_price) {
            if pt + 1 == bar.time && !bar.flags.no_trades && pm > 0.0 {
                let r = m / pm - 1.0;
                if r.abs() > RETURN_OUTLIER {
                    bar.flags.return_masked = true;
                } else {
                    bar.mid_return = Some(r);
                }
            }
        }
        prev_mid = bar.mid_price.map(|m| (bar.time, m));
    }

    for i in 0..bars.len() {
        let t = bars[i].time;
        let window: Vec<f64> = bars[..=i]
            .iter()
            .rev()
            .take_while(|b| t - b.time < VOL_WINDOW as u16)
            .filter_map(|b| b.mid_return)
            .collect();
        bars[i].volatility = sample_std(&window);
    }

    BarSeries { symbol: series.symbol.clone(), date: series.date, bars, status: series.status }
}

fn sample_std(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some(var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolCleanReport {
    pub symbol: String,
    pub missing_fraction: f64,
    pub dropped: bool,
}

/// Cleans every day of one symbol and applies the missing-value ceiling
/// across the symbol's whole sample.
pub fn clean_symbol(
    symbol: &str,
    days: &BTreeMap<u32, BarSeries>,
) -> (BTreeMap<u32, BarSeries>, SymbolCleanReport) {
    let slots = days.len() * SESSION_MINUTES;
    let missing: usize = days.values().map(missing_minutes).sum();
    let missing_fraction = if slots == 0 { 1.0 } else { missing as f64 / slots as f64 };
    let dropped = missing_fraction > MISSING_CEILING;
    let cleaned = days
        .iter()
        .map(|(d, s)| {
            let mut c = clean_bars(s);
            if dropped {
                c.status = SeriesStatus::Dropped;
            }
            (*d, c)
        })
        .collect();
    (cleaned, SymbolCleanReport { symbol: symbol.to_string(), missing_fraction, dropped })
}
