//! Fixtures shared by the benchmarks.

use geo_exec::impact::{ImpactForm, ImpactParams};
use geo_exec::marketdata::{MarketDay, MarketUniverse};
use geo_exec::orders::{Order, Side};
use geo_exec::SESSION_MINUTES;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn sqrt_impact() -> ImpactParams {
    ImpactParams::new(ImpactForm::Sqrt, 1e-4, 0.5, 6.0).expect("valid impact")
}

/// A random-walk day with noisy volume.
pub fn random_day(symbol: &str, date: u32, seed: u64) -> MarketDay {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = 100.0;
    let mids: Vec<f64> = (0..SESSION_MINUTES)
        .map(|_| {
            m *= 1.0 + rng.random_range(-2e-4..2e-4);
            m
        })
        .collect();
    let vols: Vec<f64> = (0..SESSION_MINUTES).map(|_| rng.random_range(5_000.0..15_000.0)).collect();
    MarketDay::from_path(symbol, date, &mids, &vols, 0.01)
}

/// One day and a full-session buy order of 5% of its volume.
pub fn session_order() -> (MarketUniverse, Order) {
    let day = random_day("BENCH", 20220103, 1);
    let q0 = 0.05 * day.expected_volume(0, SESSION_MINUTES);
    let order = Order {
        id: 0,
        symbol: day.symbol.clone(),
        date: day.date,
        start_minute: 0,
        horizon: SESSION_MINUTES,
        q0,
        side: Side::Buy,
        ehv_pct: 0.05,
        adv_pct: q0 / day.stats.adv_21,
        impact: sqrt_impact(),
    };
    let mut uni = MarketUniverse::default();
    uni.insert_day(day);
    (uni, order)
}
