//! Metric rows through aggregation and report files.

mod common;

use geo_exec::engine::{run_episodes, RewardWeights};
use geo_exec::evalreport::{aggregate_summary, compute_metrics, write_report, MetricRow, WinsorLimits};
use geo_exec::strategies::{Baseline, BaselineKind};

fn rows_for(kind: BaselineKind) -> Vec<MetricRow> {
    let (uni, orders) = common::drift_world(3, 0.5, 45, 30, 8);
    let out = run_episodes(&Baseline(kind), &orders, &uni, RewardWeights::default(), 1, 1);
    assert!(out.failures.is_empty());
    out.results.iter().map(compute_metrics).collect()
}

#[test]
fn uniformly_cheaper_strategy_has_lower_mean_cost() {
    let base = rows_for(BaselineKind::Twap);
    let cheaper: Vec<MetricRow> = base
        .iter()
        .map(|r| MetricRow { strategy: "cheaper".into(), total_cost_bps: r.total_cost_bps - 0.5, ..r.clone() })
        .collect();
    let all: Vec<MetricRow> = base.iter().cloned().chain(cheaper).collect();
    let s = aggregate_summary(&all, WinsorLimits::default()).unwrap();
    let cost = |name: &str| s.iter().find(|r| r.strategy == name).unwrap().total_cost_bps.mean;
    assert!(cost("cheaper") < cost("twap"));
}

#[test]
fn single_row_summarises_to_itself() {
    let row = rows_for(BaselineKind::Vwap).remove(0);
    let s = aggregate_summary(std::slice::from_ref(&row), WinsorLimits::default()).unwrap();
    assert_eq!(s.len(), 1);
    assert_eq!(s[0].count, 1);
    assert_eq!(s[0].total_cost_bps.mean, row.total_cost_bps);
    assert_eq!(s[0].total_cost_bps.se, 0.0);
    assert_eq!(s[0].completion_rate.mean, 1.0);
}

#[test]
fn identical_rows_have_zero_standard_error() {
    let row = rows_for(BaselineKind::Pov).remove(0);
    let s = aggregate_summary(&vec![row; 6], WinsorLimits::default()).unwrap();
    assert_eq!(s[0].arrival_slippage_bps.se, 0.0);
    assert_eq!(s[0].action_variability.se, 0.0);
}

#[test]
fn pathological_rows_are_counted_but_excluded() {
    let mut rows = rows_for(BaselineKind::Twap);
    rows[0].pathological = true;
    rows[0].total_cost_bps = 1e9;
    let s = aggregate_summary(&rows, WinsorLimits::default()).unwrap();
    assert_eq!(s[0].excluded, 1);
    assert_eq!(s[0].count, rows.len() - 1);
    assert!(s[0].total_cost_bps.mean < 1e6);
}

#[test]
fn report_writes_every_file() {
    let (uni, orders) = common::drift_world(2, 0.5, 30, 12, 9);
    let out = run_episodes(&Baseline(BaselineKind::Vwap), &orders, &uni, RewardWeights::default(), 1, 1);
    let dir = tempfile::tempdir().unwrap();
    let summary = write_report(dir.path(), &out.results, &RewardWeights::default(), WinsorLimits::default(), None).unwrap();
    assert_eq!(summary.len(), 1);
    for f in [
        "metrics.csv",
        "summary.csv",
        "summary.json",
        "plotdata/action_profile.csv",
        "plotdata/cost_decomposition.csv",
        "plotdata/order_anatomy.csv",
    ] {
        let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(text.lines().count() > 1, "{f} is empty");
    }
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 13);
}
