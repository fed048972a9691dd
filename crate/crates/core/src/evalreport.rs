//! Per-episode execution metrics, winsorised aggregation by strategy, and
//! the report files (summary tables and plot data).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EpisodeResult, RewardWeights};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("no usable rows to summarise")]
    Empty,
    #[error("invalid percentiles ({0}, {1})")]
    Percentiles(f64, f64),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ReportError {
    ReportError::Io { path: path.display().to_string(), msg: e.to_string() }
}

/// Execution metrics for one episode. Fractions are in `[0, 1]`; costs in
/// basis points of the arrival price unless named otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub order_id: u64,
    pub strategy: String,
    pub symbol: String,
    pub date: u32,
    pub side: f64,
    /// `None` when nothing was executed.
    pub arrival_slippage_bps: Option<f64>,
    pub market_vwap_vs_arrival_bps: f64,
    /// Side-signed, in currency per share.
    pub vwap_slippage: Option<f64>,
    pub completion_rate: f64,
    pub horizon_usage: f64,
    pub action_variability: f64,
    pub mean_action: f64,
    pub no_trade_pct: f64,
    pub high_rate_favourable_pct: f64,
    pub low_rate_unfavourable_pct: f64,
    pub total_cost_bps: f64,
    /// Side-signed mid move from arrival to the last horizon minute.
    pub return_drift_bps: f64,
    pub notional: f64,
    pub pathological: bool,
}

/// Computes every metric from the step records alone.
///
/// The market VWAP benchmark is the running market VWAP after the last
/// step, i.e. over the whole horizon. A minute counts as favourable when
/// the mid is on the good side of the running market VWAP for the order's
/// side (below it for a buy, above it for a sell).
pub fn compute_metrics(r: &EpisodeResult) -> MetricRow {
    let h = r.horizon as f64;
    let side = r.side;
    let p0 = r.p0;
    let executed: f64 = r.steps.iter().map(|s| s.q).sum();
    let paid: f64 = r.steps.iter().filter_map(|s| s.p_fill.map(|p| p * s.q)).sum();
    let avg_paid = paid / r.q0;
    let p_vwap = r.steps.last().map_or(p0, |s| s.market_vwap_running);
    let pathological = !(executed > 0.0) || !(r.q0 > 0.0) || !(p0 > 0.0) || !paid.is_finite();

    let actions: Vec<f64> = r.steps.iter().map(|s| s.action).collect();
    let n_a = actions.len().max(1) as f64;
    let mean_action = actions.iter().sum::<f64>() / n_a;
    let action_variability = actions.iter().map(|a| (a - mean_action).powi(2)).sum::<f64>() / n_a;

    let last_trade = r.steps.iter().rev().find(|s| s.q > 0.0).map_or(0, |s| s.t);
    let count = |f: &dyn Fn(&crate::engine::StepRecord) -> bool| r.steps.iter().filter(|s| f(s)).count() as f64 / h;
    let end_mid = r.steps.last().map_or(p0, |s| s.mid);
    let total_cost = -r.steps.iter().map(|s| s.reward).sum::<f64>();

    MetricRow {
        order_id: r.order_id,
        strategy: r.policy.clone(),
        symbol: r.symbol.clone(),
        date: r.date,
        side,
        arrival_slippage_bps: (!pathological).then(|| 1e4 * side * (avg_paid - p0) / p0),
        market_vwap_vs_arrival_bps: 1e4 * (p_vwap - p0) / p0,
        vwap_slippage: (!pathological).then_some(side * (avg_paid - p_vwap)),
        completion_rate: executed / r.q0,
        horizon_usage: last_trade as f64 / h,
        action_variability,
        mean_action,
        // Minutes the episode never reached count as idle.
        no_trade_pct: (h - r.steps.iter().filter(|s| s.q > 0.0).count() as f64) / h,
        high_rate_favourable_pct: count(&|s| {
            s.q > s.rho_target * s.market_volume && side * (s.mid - s.market_vwap_running) < 0.0
        }),
        low_rate_unfavourable_pct: count(&|s| {
            s.q < s.rho_target * s.market_volume && side * (s.mid - s.market_vwap_running) > 0.0
        }),
        total_cost_bps: 1e4 * total_cost / p0,
        return_drift_bps: 1e4 * side * (end_mid - p0) / p0,
        notional: paid,
        pathological,
    }
}

/// Nearest-rank percentile: the `ceil(p n)`-th smallest value (1-based).
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    // The small slack keeps e.g. 0.1 * 100 from rounding up to rank 11.
    let k = ((p * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// Clamps values outside the `[p_lo, p_hi]` nearest-rank percentiles to
/// them, keeping the input order.
pub fn winsorize(values: &[f64], p_lo: f64, p_hi: f64) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (nearest_rank(&sorted, p_lo), nearest_rank(&sorted, p_hi));
    values.iter().map(|v| v.clamp(lo, hi)).collect()
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub se: f64,
}

pub fn mean_se(x: &[f64]) -> Stat {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return Stat { mean, se: 0.0 };
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Stat { mean, se: var.sqrt() / n.sqrt() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: String,
    pub count: usize,
    pub excluded: usize,
    pub notional: f64,
    pub arrival_slippage_bps: Stat,
    pub market_vwap_vs_arrival_bps: Stat,
    pub vwap_slippage: Stat,
    pub total_cost_bps: Stat,
    pub return_drift_bps: Stat,
    /// Mean horizon usage, in percent.
    pub duration_pct: f64,
    /// Mean action, in percent.
    pub action_pct: Stat,
    pub action_variability: Stat,
    pub completion_rate: Stat,
    pub no_trade_pct: Stat,
    pub high_rate_favourable_pct: Stat,
    pub low_rate_unfavourable_pct: Stat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinsorLimits {
    pub lo: f64,
    pub hi: f64,
}

impl Default for WinsorLimits {
    fn default() -> Self {
        WinsorLimits { lo: 0.01, hi: 0.99 }
    }
}

/// Groups rows by strategy, drops pathological rows, winsorises each
/// metric within its group, and reports means with standard errors.
pub fn aggregate_summary(rows: &[MetricRow], limits: WinsorLimits) -> Result<Vec<SummaryRow>, ReportError> {
    if !(0.0..=1.0).contains(&limits.lo) || !(0.0..=1.0).contains(&limits.hi) || limits.lo > limits.hi {
        return Err(ReportError::Percentiles(limits.lo, limits.hi));
    }
    let mut groups: BTreeMap<&str, Vec<&MetricRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.strategy.as_str()).or_default().push(r);
    }
    let mut out = Vec::new();
    for (name, all) in groups {
        let good: Vec<&MetricRow> = all.iter().copied().filter(|r| !r.pathological).collect();
        if good.is_empty() {
            log::warn!("strategy {name}: every row is pathological; left out of the summary");
            continue;
        }
        let stat = |f: &dyn Fn(&MetricRow) -> f64| {
            let v: Vec<f64> = good.iter().map(|r| f(r)).collect();
            mean_se(&winsorize(&v, limits.lo, limits.hi))
        };
        let usage: Vec<f64> = good.iter().map(|r| r.horizon_usage).collect();
        let usage = winsorize(&usage, limits.lo, limits.hi);
        let action = stat(&|r| r.mean_action);
        out.push(SummaryRow {
            strategy: name.to_string(),
            count: good.len(),
            excluded: all.len() - good.len(),
            notional: good.iter().map(|r| r.notional).sum(),
            arrival_slippage_bps: stat(&|r| r.arrival_slippage_bps.unwrap_or(0.0)),
            market_vwap_vs_arrival_bps: stat(&|r| r.market_vwap_vs_arrival_bps),
            vwap_slippage: stat(&|r| r.vwap_slippage.unwrap_or(0.0)),
            total_cost_bps: stat(&|r| r.total_cost_bps),
            return_drift_bps: stat(&|r| r.return_drift_bps),
            duration_pct: 100.0 * usage.iter().sum::<f64>() / usage.len() as f64,
            action_pct: Stat { mean: 100.0 * action.mean, se: 100.0 * action.se },
            action_variability: stat(&|r| r.action_variability),
            completion_rate: stat(&|r| r.completion_rate),
            no_trade_pct: stat(&|r| r.no_trade_pct),
            high_rate_favourable_pct: stat(&|r| r.high_rate_favourable_pct),
            low_rate_unfavourable_pct: stat(&|r| r.low_rate_unfavourable_pct),
        });
    }
    if out.is_empty() {
        return Err(ReportError::Empty);
    }
    Ok(out)
}

const STAT_COLUMNS: [&str; 11] = [
    "arrival_slippage_bps",
    "market_vwap_vs_arrival_bps",
    "vwap_slippage",
    "total_cost_bps",
    "return_drift_bps",
    "action_pct",
    "action_variability",
    "completion_rate",
    "no_trade_pct",
    "high_rate_favourable_pct",
    "low_rate_unfavourable_pct",
];

fn stats_of(r: &SummaryRow) -> [Stat; 11] {
    [
        r.arrival_slippage_bps,
        r.market_vwap_vs_arrival_bps,
        r.vwap_slippage,
        r.total_cost_bps,
        r.return_drift_bps,
        r.action_pct,
        r.action_variability,
        r.completion_rate,
        r.no_trade_pct,
        r.high_rate_favourable_pct,
        r.low_rate_unfavourable_pct,
    ]
}

pub fn write_summary_csv(rows: &[SummaryRow], w: impl Write) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["strategy".to_string(), "count".into(), "excluded".into(), "notional".into(), "duration_pct".into()];
    for c in STAT_COLUMNS {
        header.push(c.to_string());
        header.push(format!("{c}_se"));
    }
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.strategy.clone(), r.count.to_string(), r.excluded.to_string(), r.notional.to_string(), r.duration_pct.to_string()];
        for s in stats_of(r) {
            rec.push(s.mean.to_string());
            rec.push(s.se.to_string());
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Mean action per horizon decile, split by whether the price moved
/// against the order (`adverse`) or with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionProfileRow {
    pub strategy: String,
    pub drift: String,
    pub bucket: usize,
    pub mean_action: f64,
    pub n_steps: usize,
}

pub const PROFILE_BUCKETS: usize = 10;

pub fn action_profile(results: &[EpisodeResult]) -> Vec<ActionProfileRow> {
    let mut acc: BTreeMap<(String, &'static str, usize), (f64, usize)> = BTreeMap::new();
    for r in results {
        let end_mid = r.steps.last().map_or(r.p0, |s| s.mid);
        let drift = if r.side * (end_mid - r.p0) > 0.0 { "adverse" } else { "favourable" };
        for s in &r.steps {
            let b = (s.t * PROFILE_BUCKETS / r.horizon).min(PROFILE_BUCKETS - 1);
            let e = acc.entry((r.policy.clone(), drift, b)).or_insert((0.0, 0));
            e.0 += s.action;
            e.1 += 1;
        }
    }
    acc.into_iter()
        .map(|((strategy, drift, bucket), (sum, n))| ActionProfileRow {
            strategy,
            drift: drift.to_string(),
            bucket,
            mean_action: sum / n as f64,
            n_steps: n,
        })
        .collect()
}

/// Mean weighted reward terms per order, in bps of arrival; the four terms
/// add up to `total_cost_bps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostDecompositionRow {
    pub strategy: String,
    pub arrival_bps: f64,
    pub vwap_bps: f64,
    pub tracking_bps: f64,
    pub holding_bps: f64,
    pub total_cost_bps: f64,
    pub n_orders: usize,
}

pub fn cost_decomposition(results: &[EpisodeResult], w: &RewardWeights) -> Vec<CostDecompositionRow> {
    let mut acc: BTreeMap<&str, ([f64; 4], usize)> = BTreeMap::new();
    for r in results {
        let e = acc.entry(r.policy.as_str()).or_insert(([0.0; 4], 0));
        let k = 1e4 / r.p0;
        for s in &r.steps {
            let c = &s.components;
            e.0[0] += k * w.beta1 * c.c_arrival;
            e.0[1] += k * w.beta2 * c.c_vwap;
            e.0[2] += k * w.beta3 * c.delta;
            e.0[3] += k * w.beta4 * c.zeta;
        }
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(s, (t, n))| {
            let m = |x: f64| x / n as f64;
            CostDecompositionRow {
                strategy: s.to_string(),
                arrival_bps: m(t[0]),
                vwap_bps: m(t[1]),
                tracking_bps: m(t[2]),
                holding_bps: m(t[3]),
                total_cost_bps: m(t.iter().sum()),
                n_orders: n,
            }
        })
        .collect()
}

/// Step-by-step trace of one order under every strategy that ran it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnatomyRow {
    pub strategy: String,
    pub order_id: u64,
    pub t: usize,
    pub minute: usize,
    pub action: f64,
    pub q: f64,
    pub cum_executed: f64,
    pub p_fill: Option<f64>,
    pub mid: f64,
    pub market_vwap_running: f64,
    pub impact_bps: f64,
    pub rho_target: f64,
    pub market_volume: f64,
}

pub fn order_anatomy(results: &[EpisodeResult], order_id: u64) -> Vec<AnatomyRow> {
    let mut out = Vec::new();
    for r in results.iter().filter(|r| r.order_id == order_id) {
        let mut cum = 0.0;
        for s in &r.steps {
            cum += s.q;
            out.push(AnatomyRow {
                strategy: r.policy.clone(),
                order_id,
                t: s.t,
                minute: s.minute,
                action: s.action,
                q: s.q,
                cum_executed: cum,
                p_fill: s.p_fill,
                mid: s.mid,
                market_vwap_running: s.market_vwap_running,
                impact_bps: s.impact_bps,
                rho_target: s.rho_target,
                market_volume: s.market_volume,
            });
        }
    }
    out
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ReportError> {
    let f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(f));
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes `metrics.csv`, `summary.csv`, `summary.json` and the
/// `plotdata/` files under `dir`. The anatomy trace follows
/// `anatomy_order`, or the lowest order id present.
pub fn write_report(
    dir: &Path,
    results: &[EpisodeResult],
    weights: &RewardWeights,
    limits: WinsorLimits,
    anatomy_order: Option<u64>,
) -> Result<Vec<SummaryRow>, ReportError> {
    let rows: Vec<MetricRow> = results.iter().map(compute_metrics).collect();
    let summary = aggregate_summary(&rows, limits)?;
    let plot = dir.join("plotdata");
    std::fs::create_dir_all(&plot).map_err(|e| io_err(&plot, e))?;

    write_rows(&dir.join("metrics.csv"), &rows)?;
    let path = dir.join("summary.csv");
    let f = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    write_summary_csv(&summary, std::io::BufWriter::new(f)).map_err(|e| io_err(&path, e))?;
    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| io_err(&path, e))?;
    std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;

    write_rows(&plot.join("action_profile.csv"), &action_profile(results))?;
    write_rows(&plot.join("cost_decomposition.csv"), &cost_decomposition(results, weights))?;
    let id = anatomy_order.or_else(|| results.iter().map(|r| r.order_id).min());
    let anatomy = id.map(|id| order_anatomy(results, id)).unwrap_or_default();
    write_rows(&plot.join("order_anatomy.csv"), &anatomy)?;
    Ok(summary)
}
