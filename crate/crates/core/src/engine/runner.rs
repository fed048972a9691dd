use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Episode, EngineError, RewardComponents, RewardWeights};
use crate::marketdata::MarketUniverse;
use crate::orders::Order;
use crate::seeding::derive_indexed;
use crate::strategies::Policy;

/// One step of an episode as written to the results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub minute: usize,
    pub action: f64,
    pub q: f64,
    pub p_fill: Option<f64>,
    pub impact_bps: f64,
    pub market_volume: f64,
    pub rho_target: f64,
    pub mid: f64,
    pub market_vwap_running: f64,
    pub reward: f64,
    pub components: RewardComponents,
    pub forced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub executed: f64,
    pub notional: f64,
    /// `None` when nothing was executed.
    pub fill_vwap: Option<f64>,
    pub arrival_slippage_bps: Option<f64>,
    /// Side-signed fill VWAP minus horizon market VWAP, in currency.
    pub vwap_slippage: Option<f64>,
    pub market_vwap_horizon: f64,
    pub end_mid: f64,
    /// Negated sum of step rewards.
    pub total_cost: f64,
    pub total_cost_bps: f64,
    pub completion: f64,
    /// Index of the last minute with a fill, over the horizon.
    pub horizon_usage: f64,
    pub mean_action: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub order_id: u64,
    pub symbol: String,
    pub date: u32,
    pub side: f64,
    pub q0: f64,
    pub horizon: usize,
    pub p0: f64,
    pub policy: String,
    pub steps: Vec<StepRecord>,
    pub summary: EpisodeSummary,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOutput {
    pub results: Vec<EpisodeResult>,
    pub failures: Vec<(u64, EngineError)>,
}

impl RunOutput {
    /// Writes one JSON object per line.
    pub fn write_jsonl(&self, w: &mut impl Write) -> std::io::Result<()> {
        for r in &self.results {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Runs one order to completion.
pub fn run_episode(
    policy: &dyn Policy,
    order: &Order,
    universe: &MarketUniverse,
    weights: RewardWeights,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeResult, EngineError> {
    let day = universe
        .day(&order.symbol, order.date)
        .ok_or_else(|| EngineError::Setup(format!("no market data for {} {}", order.symbol, order.date)))?;
    let (mut ep, mut obs) = Episode::reset(order, day, weights)?;
    let mut steps = Vec::with_capacity(order.horizon);
    let mut total_reward = 0.0;
    while !ep.state().done {
        let decision = policy.decide(&obs, &ep.context(), rng);
        let out = ep.step(decision)?;
        total_reward += out.reward;
        steps.push(StepRecord {
            t: out.info.t,
            minute: out.info.minute,
            action: out.info.action,
            q: out.info.q,
            p_fill: out.info.p_fill,
            impact_bps: out.info.impact_bps,
            market_volume: out.info.market_volume,
            rho_target: out.info.rho_target,
            mid: out.info.mid,
            market_vwap_running: out.info.market_vwap_running,
            reward: out.reward,
            components: out.components,
            forced: out.info.forced,
        });
        obs = out.observation;
    }
    let st = ep.state();
    let side = order.side.sign();
    let fill_vwap = st.fill_vwap();
    let market_vwap_horizon = day.market_vwap(order.start_minute, order.end_minute());
    let last_trade = steps.iter().rev().find(|s| s.q > 0.0).map_or(0, |s| s.t);
    let total_cost = -total_reward;
    Ok(EpisodeResult {
        order_id: order.id,
        symbol: order.symbol.clone(),
        date: order.date,
        side,
        q0: order.q0,
        horizon: order.horizon,
        p0: st.p0,
        policy: policy.name(),
        summary: EpisodeSummary {
            executed: st.executed,
            notional: st.notional(),
            fill_vwap,
            arrival_slippage_bps: fill_vwap.map(|f| 1e4 * side * (f - st.p0) / st.p0),
            vwap_slippage: fill_vwap.map(|f| side * (f - market_vwap_horizon)),
            market_vwap_horizon,
            end_mid: day.minutes[order.end_minute() - 1].mid,
            total_cost,
            total_cost_bps: 1e4 * total_cost / st.p0,
            completion: st.executed / order.q0,
            horizon_usage: last_trade as f64 / order.horizon as f64,
            mean_action: steps.iter().map(|s| s.action).sum::<f64>() / steps.len() as f64,
            steps: steps.len(),
        },
        steps,
    })
}

/// Runs every order on a pool of `n_workers` threads. Episode `i` draws
/// from the stream `derive_indexed(seed, "episode", order.id)`, so results
/// do not depend on scheduling. Failed episodes are collected, not fatal.
pub fn run_episodes(
    policy: &dyn Policy,
    orders: &[Order],
    universe: &MarketUniverse,
    weights: RewardWeights,
    seed: u64,
    n_workers: usize,
) -> RunOutput {
    let run = |o: &Order| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(seed, "episode", o.id));
        run_episode(policy, o, universe, weights, &mut rng).map_err(|e| (o.id, e))
    };
    let outcomes: Vec<Result<EpisodeResult, (u64, EngineError)>> = if n_workers <= 1 {
        orders.iter().map(run).collect()
    } else {
        match rayon::ThreadPoolBuilder::new().num_threads(n_workers).build() {
            Ok(pool) => pool.install(|| orders.par_iter().map(run).collect()),
            Err(e) => {
                log::warn!("could not build a {n_workers}-thread pool ({e}); running on the global pool");
                orders.par_iter().map(run).collect()
            }
        }
    };
    let mut out = RunOutput::default();
    for o in outcomes {
        match o {
            Ok(r) => out.results.push(r),
            Err(f) => {
                log::warn!("order {} failed: {}", f.0, f.1);
                out.failures.push(f);
            }
        }
    }
    out
}
