//! Minute-bar data: loading, cleaning, daily analytics and a synthetic generator.
//!
//! On disk the data is one CSV per symbol-day (`<root>/<SYMBOL>/<YYYYMMDD>.csv`)
//! plus one daily-stats CSV per symbol. In memory a cleaned, analysed universe
//! is held as a [`MarketUniverse`] of dense [`MarketDay`] views.

mod bars;
mod clean;
mod daily;
mod synth;
mod universe;

pub use bars::{
    load_bar_file, load_minute_bars, write_bar_file, BarFlags, BarSeries, LoadOutput, MinuteBar,
    RejectedRow, SeriesStatus, BAR_COLUMNS,
};
pub use clean::{clean_bars, clean_symbol, missing_minutes, SymbolCleanReport, MISSING_CEILING, RETURN_OUTLIER};
pub use daily::{
    compute_daily_stats, parkinson_vol, write_daily_stats, DailyStats, DAILY_COLUMNS, SIGMA_CEIL,
    SIGMA_FLOOR, TRAILING_DAYS,
};
pub use synth::{synth_generate, trading_dates, write_bar_tree, SynthConfig};
pub use universe::{MarketDay, MarketUniverse, MinuteView};

use std::path::PathBuf;
use thiserror::Error;

pub type SymbolDays = std::collections::BTreeMap<String, std::collections::BTreeMap<u32, BarSeries>>;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },
    #[error("{path}: schema error: {msg}")]
    Schema { path: PathBuf, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io { path: path.into(), source }
    }
    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        DataError::Csv { path: path.into(), source }
    }
}

/// Shortest round-trip text for an optional float; `None` is an empty field.
pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
