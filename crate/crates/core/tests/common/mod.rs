//! Small controlled worlds shared by the integration tests.
#![allow(dead_code)]

use geo_exec::impact::{ImpactForm, ImpactParams};
use geo_exec::marketdata::{MarketDay, MarketUniverse};
use geo_exec::orders::{Order, Side};
use geo_exec::SESSION_MINUTES;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn order(id: u64, day: &MarketDay, start: usize, horizon: usize, q0: f64, side: Side, impact: ImpactParams) -> Order {
    let ev = day.expected_volume(start, start + horizon);
    Order {
        id,
        symbol: day.symbol.clone(),
        date: day.date,
        start_minute: start,
        horizon,
        q0,
        side,
        ehv_pct: q0 / ev,
        adv_pct: q0 / day.stats.adv_21,
        impact,
    }
}

pub fn mild_impact() -> ImpactParams {
    ImpactParams::new(ImpactForm::Sqrt, 1e-4, 0.5, 6.0).unwrap()
}

/// Days whose mid rises by `drift_bps` per minute, with small noise, flat
/// volume, and buy orders of `horizon` minutes. Buyers gain by trading early.
pub fn drift_world(n_days: usize, drift_bps: f64, horizon: usize, n_orders: usize, seed: u64) -> (MarketUniverse, Vec<Order>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.5e-4).unwrap();
    let mut uni = MarketUniverse::default();
    let mut days = Vec::new();
    for d in 0..n_days {
        let mut mids = Vec::with_capacity(SESSION_MINUTES);
        let mut m = 100.0;
        for _ in 0..SESSION_MINUTES {
            mids.push(m);
            m *= 1.0 + drift_bps * 1e-4 + noise.sample(&mut rng);
        }
        let vols: Vec<f64> = (0..SESSION_MINUTES).map(|_| rng.random_range(8_000.0..12_000.0)).collect();
        let day = MarketDay::from_path("DRIFT", 20220103 + d as u32, &mids, &vols, 0.01);
        days.push(day.clone());
        uni.insert_day(day);
    }
    let orders = (0..n_orders)
        .map(|i| {
            let day = &days[rng.random_range(0..days.len())];
            let start = rng.random_range(0..=SESSION_MINUTES - horizon);
            let q0 = 0.05 * day.expected_volume(start, start + horizon);
            order(i as u64, day, start, horizon, q0, Side::Buy, mild_impact())
        })
        .collect();
    (uni, orders)
}

/// Nine symbols on a liquidity x volatility grid. Mids drift by
/// `+drift_bps` per minute for the top volatility tercile, `-drift_bps` for
/// the bottom one, and not at all in between, so buyers should hurry in
/// volatile names and wait in calm ones. Returns the universe, the dates,
/// and buy orders on every symbol-day.
pub fn regime_world(n_days: usize, drift_bps: f64, horizon: usize, orders_per_day: usize, seed: u64) -> (MarketUniverse, Vec<u32>, Vec<Order>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.3e-4).unwrap();
    let mut uni = MarketUniverse::default();
    let dates: Vec<u32> = (0..n_days as u32).map(|d| 20220103 + d).collect();
    let mut orders = Vec::new();
    let mut id = 0;
    for &date in &dates {
        for k in 0..9usize {
            let (li, vj) = (k / 3, k % 3);
            let per_minute = 2_000.0 * 4f64.powi(li as i32) * (1.0 + 0.01 * vj as f64);
            let sigma = 0.005 * (1.0 + vj as f64) * (1.0 + 0.01 * li as f64);
            // Rank k of 9 on the volatility axis: bins follow the descriptor.
            let vol_rank = (3 * vj + li + 1) as f64 / 9.0;
            let drift = match ((vol_rank * 3.0).floor() as usize).min(2) {
                0 => -drift_bps,
                1 => 0.0,
                _ => drift_bps,
            };
            let mut mids = Vec::with_capacity(SESSION_MINUTES);
            let mut m = 50.0 + 10.0 * k as f64;
            for _ in 0..SESSION_MINUTES {
                mids.push(m);
                m *= 1.0 + drift * 1e-4 + noise.sample(&mut rng);
            }
            let vols: Vec<f64> = (0..SESSION_MINUTES).map(|_| per_minute * rng.random_range(0.8..1.2)).collect();
            let day = MarketDay::from_path(&format!("S{k}"), date, &mids, &vols, sigma);
            for _ in 0..orders_per_day {
                let start = rng.random_range(0..=SESSION_MINUTES - horizon);
                let q0 = 0.05 * day.expected_volume(start, start + horizon);
                orders.push(order(id, &day, start, horizon, q0, Side::Buy, mild_impact()));
                id += 1;
            }
            uni.insert_day(day);
        }
    }
    (uni, dates, orders)
}
