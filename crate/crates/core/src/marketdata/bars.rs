use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{fmt_opt, DataError, SymbolDays};
use crate::SESSION_MINUTES;

/// Column order of the minute-bar CSV.
pub const BAR_COLUMNS: [&str; 15] = [
    "time",
    "trade_count",
    "trade_volume",
    "hid_vol",
    "unsided_vol",
    "sell_vol",
    "buy_vol",
    "bid_price",
    "ask_price",
    "bid_size",
    "ask_size",
    "trade_last",
    "trade_high",
    "trade_low",
    "vwap",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BarFlags {
    /// Quotes were copied from the previous minute during cleaning.
    pub quote_filled: bool,
    /// No reported trades; the minute is excluded when constructing returns.
    pub no_trades: bool,
    /// The mid return into this minute exceeded the outlier threshold.
    pub return_masked: bool,
}

/// One minute of market data for a single symbol.
///
/// Volumes and counts read as zero when the field is empty; prices and
/// quote sizes stay `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinuteBar {
    pub time: u16,
    pub trade_count: f64,
    pub trade_volume: f64,
    pub hid_vol: f64,
    pub unsided_vol: f64,
    pub sell_vol: f64,
    pub buy_vol: f64,
    pub bid_price: Option<f64>,
    pub ask_price: Option<f64>,
    pub bid_size: Option<f64>,
    pub ask_size: Option<f64>,
    pub trade_last: Option<f64>,
    pub trade_high: Option<f64>,
    pub trade_low: Option<f64>,
    pub vwap: Option<f64>,
    pub mid_price: Option<f64>,
    pub trade_imbalance: Option<f64>,
    /// Mid return from the previous minute, when constructible and not masked.
    pub mid_return: Option<f64>,
    /// 21-minute rolling standard deviation of mid returns.
    pub volatility: Option<f64>,
    pub flags: BarFlags,
}

impl MinuteBar {
    /// An empty minute: no trades, no quotes.
    pub fn empty(time: u16) -> Self {
        MinuteBar {
            time,
            trade_count: 0.0,
            trade_volume: 0.0,
            hid_vol: 0.0,
            unsided_vol: 0.0,
            sell_vol: 0.0,
            buy_vol: 0.0,
            bid_price: None,
            ask_price: None,
            bid_size: None,
            ask_size: None,
            trade_last: None,
            trade_high: None,
            trade_low: None,
            vwap: None,
            mid_price: None,
            trade_imbalance: None,
            mid_return: None,
            volatility: None,
            flags: BarFlags::default(),
        }
    }

    pub fn has_quotes(&self) -> bool {
        self.bid_price.is_some() && self.ask_price.is_some()
    }

    pub fn has_trades(&self) -> bool {
        self.trade_volume > 0.0 && self.trade_count > 0.0
    }

    /// Recomputes `mid_price` and `trade_imbalance` from the raw fields.
    pub fn derive(&mut self) {
        self.mid_price = match (self.bid_price, self.ask_price) {
            (Some(b), Some(a)) => Some((b + a) / 2.0),
            _ => None,
        };
        self.trade_imbalance = if self.trade_volume > 0.0 {
            Some((self.buy_vol - self.sell_vol) / self.trade_volume)
        } else {
            None
        };
    }

    /// Checks the row-level invariants, returning the first violation.
    pub fn check(&self) -> Result<(), String> {
        if usize::from(self.time) >= SESSION_MINUTES {
            return Err(format!("time {} outside session", self.time));
        }
        let vols = [
            self.trade_count,
            self.trade_volume,
            self.hid_vol,
            self.unsided_vol,
            self.sell_vol,
            self.buy_vol,
        ];
        if vols.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err("negative or non-finite volume".into());
        }
        if let (Some(b), Some(a)) = (self.bid_price, self.ask_price) {
            if b > a {
                return Err(format!("bid {b} above ask {a}"));
            }
        }
        if self.trade_volume > 0.0 {
            if let (Some(lo), Some(v), Some(hi)) = (self.trade_low, self.vwap, self.trade_high) {
                if !(lo <= v && v <= hi) {
                    return Err(format!("vwap {v} outside [{lo}, {hi}]"));
                }
            }
        }
        let sided = self.buy_vol + self.sell_vol + self.unsided_vol;
        if sided > self.trade_volume * (1.0 + 1e-12) {
            return Err(format!(
                "sided volume {sided} exceeds trade volume {}",
                self.trade_volume
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeriesStatus {
    Ok,
    /// Removed by the missing-value ceiling.
    Dropped,
}

/// Minute bars for one symbol-day, strictly increasing in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarSeries {
    pub symbol: String,
    pub date: u32,
    pub bars: Vec<MinuteBar>,
    pub status: SeriesStatus,
}

impl BarSeries {
    pub fn new(symbol: impl Into<String>, date: u32, bars: Vec<MinuteBar>) -> Self {
        BarSeries { symbol: symbol.into(), date, bars, status: SeriesStatus::Ok }
    }

    /// Dense per-minute view; absent minutes are `None`.
    pub fn dense(&self) -> Vec<Option<&MinuteBar>> {
        let mut out = vec![None; SESSION_MINUTES];
        for bar in &self.bars {
            out[usize::from(bar.time)] = Some(bar);
        }
        out
    }
}

/// A row refused by the loader, with its 1-based file line.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectedRow {
    pub path: PathBuf,
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct LoadOutput {
    pub bars: SymbolDays,
    pub rejected: Vec<RejectedRow>,
}

fn parse_field(raw: &str, name: &str, path: &Path, line: u64) -> Result<Option<f64>, DataError> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse::<f64>().map(Some).map_err(|e| DataError::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("column {name}: {e} ({raw:?})"),
    })
}

/// Parses one symbol-day file.
///
/// Malformed rows abort with a line-numbered parse error; rows that parse but
/// violate an invariant are rejected and loading continues.
pub fn load_bar_file(
    path: &Path,
    symbol: &str,
    date: u32,
) -> Result<(BarSeries, Vec<RejectedRow>), DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| DataError::csv(path, e))?;
    let headers = reader.headers().map_err(|e| DataError::csv(path, e))?.clone();
    for h in headers.iter() {
        if !BAR_COLUMNS.contains(&h.trim()) {
            return Err(DataError::Schema { path: path.into(), msg: format!("unknown column {h:?}") });
        }
    }
    let found: Vec<&str> = headers.iter().map(str::trim).collect();
    if found != BAR_COLUMNS {
        return Err(DataError::Schema {
            path: path.into(),
            msg: format!("expected columns {BAR_COLUMNS:?}, found {found:?}"),
        });
    }

    let mut bars: Vec<MinuteBar> = Vec::new();
    let mut rejected = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            DataError::Parse { path: path.into(), line, msg: e.to_string() }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let mut vals = [None; 15];
        for (i, name) in BAR_COLUMNS.iter().enumerate() {
            vals[i] = parse_field(&record[i], name, path, line)?;
        }
        let time = match vals[0] {
            Some(t) if t.fract() == 0.0 && (0.0..SESSION_MINUTES as f64).contains(&t) => t as u16,
            other => {
                return Err(DataError::Parse {
                    path: path.into(),
                    line,
                    msg: format!("invalid time {other:?}"),
                })
            }
        };
        let mut bar = MinuteBar {
            time,
            trade_count: vals[1].unwrap_or(0.0),
            trade_volume: vals[2].unwrap_or(0.0),
            hid_vol: vals[3].unwrap_or(0.0),
            unsided_vol: vals[4].unwrap_or(0.0),
            sell_vol: vals[5].unwrap_or(0.0),
            buy_vol: vals[6].unwrap_or(0.0),
            bid_price: vals[7],
            ask_price: vals[8],
            bid_size: vals[9],
            ask_size: vals[10],
            trade_last: vals[11],
            trade_high: vals[12],
            trade_low: vals[13],
            vwap: vals[14],
            ..MinuteBar::empty(time)
        };
        bar.derive();
        let order_ok = bars.last().is_none_or(|prev| prev.time < bar.time);
        let verdict = if order_ok { bar.check() } else { Err(format!("time {} not increasing", bar.time)) };
        match verdict {
            Ok(()) => bars.push(bar),
            Err(reason) => rejected.push(RejectedRow { path: path.into(), line, reason }),
        }
    }
    Ok((BarSeries::new(symbol, date, bars), rejected))
}

/// Loads every `<root>/<SYMBOL>/<YYYYMMDD>.csv` file, optionally restricted to
/// a set of symbols.
pub fn load_minute_bars(root: &Path, symbol_filter: Option<&[String]>) -> Result<LoadOutput, DataError> {
    let mut out = LoadOutput::default();
    let mut symbol_dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| DataError::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    symbol_dirs.sort();
    for dir in symbol_dirs {
        let symbol = dir.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if let Some(filter) = symbol_filter {
            if !filter.iter().any(|s| s == &symbol) {
                continue;
            }
        }
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| DataError::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        let mut days = BTreeMap::new();
        for file in files {
            let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let date: u32 = stem.parse().map_err(|_| DataError::Schema {
                path: file.clone(),
                msg: format!("file name {stem:?} is not a YYYYMMDD date"),
            })?;
            let (series, rejected) = load_bar_file(&file, &symbol, date)?;
            out.rejected.extend(rejected);
            days.insert(date, series);
        }
        out.bars.insert(symbol, days);
    }
    Ok(out)
}

/// Writes a series in the minute-bar CSV schema.
pub fn write_bar_file(path: &Path, series: &BarSeries) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| DataError::csv(path, e))?;
    w.write_record(BAR_COLUMNS).map_err(|e| DataError::csv(path, e))?;
    for b in &series.bars {
        let row = [
            b.time.to_string(),
            b.trade_count.to_string(),
            b.trade_volume.to_string(),
            b.hid_vol.to_string(),
            b.unsided_vol.to_string(),
            b.sell_vol.to_string(),
            b.buy_vol.to_string(),
            fmt_opt(b.bid_price),
            fmt_opt(b.ask_price),
            fmt_opt(b.bid_size),
            fmt_opt(b.ask_size),
            fmt_opt(b.trade_last),
            fmt_opt(b.trade_high),
            fmt_opt(b.trade_low),
            fmt_opt(b.vwap),
        ];
        w.write_record(&row).map_err(|e| DataError::csv(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}
