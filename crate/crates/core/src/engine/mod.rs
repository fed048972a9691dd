//! The episodic execution environment.
//!
//! An [`Episode`] walks one parent order through its horizon a minute at a
//! time. Each step sizes a child trade from the target-rate scaffolding (or
//! takes a direct quantity from a schedule baseline), fills it at the
//! minute's market VWAP shifted by the running transient impact, and scores
//! it with the four-term cost reward. The last minute sweeps whatever is
//! left so every episode completes.

mod runner;

pub use runner::{run_episode, run_episodes, EpisodeResult, EpisodeSummary, RunOutput, StepRecord};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::impact::{fill_price, instant_impact, ImpactError, ImpactState, Trade};
use crate::marketdata::MarketDay;
use crate::orders::Order;
use crate::SESSION_MINUTES;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("setup error: {0}")]
    Setup(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Impact(#[from] ImpactError),
}

/// The nine discrete actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ActionSpace;

impl ActionSpace {
    pub const VALUES: [f64; 9] = [-1.0, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0];
    pub const N: usize = 9;

    pub fn value(index: usize) -> Option<f64> {
        Self::VALUES.get(index).copied()
    }

    pub fn index_of(a: f64) -> Option<usize> {
        Self::VALUES.iter().position(|v| *v == a)
    }
}

/// What a policy asks the engine to do this minute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Decision {
    /// Index into [`ActionSpace::VALUES`].
    Action(usize),
    /// Direct child quantity in shares (schedule baselines).
    Quantity(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { beta1: 1.0, beta2: 1.0, beta3: 1.0, beta4: 0.1 }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), EngineError> {
        if [self.beta1, self.beta2, self.beta3, self.beta4].iter().all(|b| *b >= 0.0 && b.is_finite()) {
            Ok(())
        } else {
            Err(EngineError::Setup(format!("reward weights must be finite and >= 0: {self:?}")))
        }
    }
}

pub const OBS_DIM: usize = 13;

/// The agent's view, in this fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub const NAMES: [&'static str; OBS_DIM] = [
        "mid_price",
        "market_volume",
        "time_remaining",
        "q_rem",
        "adv_pct",
        "ehv_pct",
        "last_fill_price",
        "last_fill_qty",
        "immediate_impact_bps",
        "cumulative_impact_bps",
        "arrival_price",
        "sigma_1",
        "sigma_5",
    ];

    pub fn get(&self, name: &str) -> Option<f64> {
        Self::NAMES.iter().position(|n| *n == name).map(|i| self.0[i])
    }

    pub fn time_remaining(&self) -> f64 {
        self.0[2]
    }
    pub fn q_rem(&self) -> f64 {
        self.0[3]
    }
    pub fn last_fill_price(&self) -> f64 {
        self.0[6]
    }
    pub fn last_fill_qty(&self) -> f64 {
        self.0[7]
    }
    pub fn cumulative_impact_bps(&self) -> f64 {
        self.0[9]
    }
    pub fn sigma_1(&self) -> f64 {
        self.0[11]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fill {
    pub minute: usize,
    pub q: f64,
    pub price: f64,
}

/// Reward components for one step. Slippage terms are in currency, the
/// schedule and completion terms are volatility-scaled and dimensionless.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardComponents {
    pub c_arrival: f64,
    pub c_vwap: f64,
    pub delta: f64,
    pub zeta: f64,
}

impl RewardComponents {
    pub fn reward(&self, w: &RewardWeights) -> f64 {
        -(w.beta1 * self.c_arrival + w.beta2 * self.c_vwap + w.beta3 * self.delta + w.beta4 * self.zeta)
    }
}

/// Full bookkeeping of one execution episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    pub order: Order,
    /// Elapsed minutes since the order start.
    pub t: usize,
    pub q_rem: f64,
    /// Running sum of executed quantity, in execution order.
    pub executed: f64,
    pub fills: Vec<Fill>,
    pub impact: ImpactState,
    pub p0: f64,
    pub market_vwap_running: f64,
    pub expected_remaining_volume: f64,
    pub done: bool,
    notional: f64,
    // Prices are accumulated as deviations from the arrival price so that
    // costs are differences of small numbers, exactly zero in a flat market.
    fill_dev: f64,
    mkt_dev: f64,
    mkt_v: f64,
    mid_dev: f64,
    last_fill_price: f64,
    last_fill_qty: f64,
    last_immediate: f64,
}

impl EpisodeState {
    /// Fill VWAP so far, or `None` before the first fill.
    pub fn fill_vwap(&self) -> Option<f64> {
        self.fill_dev_mean().map(|d| self.p0 + d)
    }

    fn fill_dev_mean(&self) -> Option<f64> {
        (self.executed > 0.0).then(|| self.fill_dev / self.executed)
    }

    pub fn notional(&self) -> f64 {
        self.notional
    }
}

/// Per-step output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub components: RewardComponents,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub t: usize,
    pub minute: usize,
    pub q: f64,
    pub p_fill: Option<f64>,
    /// Quantity the decision asked for before the inventory clamp and sweep.
    pub scheduled_qty: f64,
    pub forced: bool,
    pub market_volume: f64,
    pub rho_target: f64,
    /// Action equivalent `q / (rho_target * V) - 1`; the chosen action for
    /// action-space policies.
    pub action: f64,
    /// Cumulative impact after this trade; positive is adverse to the order.
    pub impact_bps: f64,
    /// This minute's own-trade term, before propagation.
    pub immediate_impact_bps: f64,
    pub mid: f64,
    pub market_vwap_running: f64,
}

/// Read-only per-minute facts a policy may condition on.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub order: &'a Order,
    pub day: &'a MarketDay,
    pub t: usize,
    pub q_rem: f64,
    pub rho_target: f64,
    pub market_volume: f64,
}

/// One order walking through its horizon over one market day.
#[derive(Debug, Clone)]
pub struct Episode<'a> {
    day: &'a MarketDay,
    weights: RewardWeights,
    sigma_minute: f64,
    state: EpisodeState,
}

impl<'a> Episode<'a> {
    pub fn reset(order: &Order, day: &'a MarketDay, weights: RewardWeights) -> Result<(Self, Observation), EngineError> {
        order.validate().map_err(|e| EngineError::Setup(e.to_string()))?;
        weights.validate()?;
        if day.symbol != order.symbol || day.date != order.date {
            return Err(EngineError::Setup(format!(
                "order {} is for {} {} but data is {} {}",
                order.id, order.symbol, order.date, day.symbol, day.date
            )));
        }
        if day.minutes.len() != SESSION_MINUTES || day.profile.len() != SESSION_MINUTES {
            return Err(EngineError::Setup(format!("incomplete minute data for {} {}", day.symbol, day.date)));
        }
        let p0 = day.minutes[order.start_minute].mid;
        if !(p0 > 0.0) {
            return Err(EngineError::Setup(format!("non-positive arrival mid {p0} for order {}", order.id)));
        }
        let state = EpisodeState {
            order: order.clone(),
            t: 0,
            q_rem: order.q0,
            executed: 0.0,
            fills: Vec::new(),
            impact: ImpactState::new(order.impact, order.start_minute as u32),
            p0,
            market_vwap_running: p0,
            expected_remaining_volume: day.expected_volume(order.start_minute, order.end_minute()),
            done: false,
            notional: 0.0,
            fill_dev: 0.0,
            mkt_dev: 0.0,
            mkt_v: 0.0,
            mid_dev: 0.0,
            last_fill_price: p0,
            last_fill_qty: 0.0,
            last_immediate: 0.0,
        };
        let sigma_minute = day.stats.sigma_1 / (SESSION_MINUTES as f64).sqrt();
        let ep = Episode { day, weights, sigma_minute, state };
        let obs = ep.observation();
        Ok((ep, obs))
    }

    pub fn state(&self) -> &EpisodeState {
        &self.state
    }

    pub fn day(&self) -> &'a MarketDay {
        self.day
    }

    pub fn sigma_minute(&self) -> f64 {
        self.sigma_minute
    }

    fn minute(&self) -> usize {
        self.state.order.start_minute + self.state.t
    }

    /// `q_rem / E[V_{t,H}]` from the trailing profile. Without expected
    /// volume it falls back to spreading the remainder evenly over the
    /// minutes left at this minute's realised volume.
    pub fn target_rate(&self) -> f64 {
        let s = &self.state;
        if s.q_rem <= 0.0 || s.done {
            return 0.0;
        }
        if s.expected_remaining_volume > 0.0 {
            return s.q_rem / s.expected_remaining_volume;
        }
        let v = self.day.minutes[self.minute()].volume;
        let left = (s.order.horizon - s.t) as f64;
        if v > 0.0 {
            s.q_rem / (left * v)
        } else {
            0.0
        }
    }

    pub fn context(&self) -> StepContext<'_> {
        let m = self.minute().min(SESSION_MINUTES - 1);
        StepContext {
            order: &self.state.order,
            day: self.day,
            t: self.state.t,
            q_rem: self.state.q_rem,
            rho_target: self.target_rate(),
            market_volume: self.day.minutes[m].volume,
        }
    }

    /// The observation for the current minute. After the episode ends it
    /// describes the final minute.
    pub fn observation(&self) -> Observation {
        let s = &self.state;
        let m = self.minute().min(s.order.end_minute() - 1);
        let view = &self.day.minutes[m];
        Observation([
            view.mid,
            view.volume,
            (s.order.horizon - s.t) as f64,
            s.q_rem,
            s.order.adv_pct,
            s.order.ehv_pct,
            s.last_fill_price,
            s.last_fill_qty,
            s.last_immediate * 1e4,
            s.order.side.sign() * s.impact.accumulator * 1e4,
            s.p0,
            self.day.stats.sigma_1,
            self.day.stats.sigma_5,
        ])
    }

    pub fn step(&mut self, decision: Decision) -> Result<StepOutcome, EngineError> {
        if self.state.done {
            return Err(EngineError::Usage(format!("order {} is already done", self.state.order.id)));
        }
        let m = self.minute();
        let view = self.day.minutes[m];
        let rho_target = self.target_rate();
        let side = self.state.order.side.sign();
        let v_t = view.volume;

        let (scheduled, chosen_action) = match decision {
            Decision::Action(i) => {
                let a = ActionSpace::value(i)
                    .ok_or_else(|| EngineError::Usage(format!("action index {i} outside the action space")))?;
                ((1.0 + a) * rho_target * v_t, Some(a))
            }
            Decision::Quantity(q) => {
                if !(q >= 0.0 && q.is_finite()) {
                    return Err(EngineError::Usage(format!("direct quantity must be finite and >= 0, got {q}")));
                }
                (q, None)
            }
        };
        let forced = self.state.t + 1 == self.state.order.horizon;
        let closes = forced || scheduled >= self.state.q_rem;
        let q = if closes {
            closing_quantity(self.state.executed, self.state.order.q0)
        } else {
            scheduled
        };

        // The agent's trade does not change market volume; a sweep into an
        // empty minute is charged against the profile volume instead.
        let v_fill = if v_t > 0.0 { v_t } else { self.day.profile[m].max(1.0) };
        let immediate = if q > 0.0 { self.state.order.impact.g0 * instant_impact(q, v_fill, &self.state.order.impact)? } else { 0.0 };
        self.state.impact = self.state.impact.propagate(Trade { q, volume: v_fill, sign: side }, 1)?;
        // The accumulator carries the trade sign; the fill shift wants the
        // impact relative to the order, which is adverse for either side.
        let impact = side * self.state.impact.accumulator;

        let p_fill = (q > 0.0).then(|| fill_price(view.vwap, side, impact));
        if let Some(p) = p_fill {
            self.state.fills.push(Fill { minute: m, q, price: p });
            self.state.notional += p * q;
            self.state.fill_dev += (p - self.state.p0) * q;
            self.state.executed += q;
            self.state.last_fill_price = p;
        }
        self.state.last_fill_qty = q;
        self.state.last_immediate = immediate;
        self.state.q_rem = if closes { 0.0 } else { (self.state.order.q0 - self.state.executed).max(0.0) };

        let p0 = self.state.p0;
        self.state.mkt_dev += (view.vwap - p0) * v_t;
        self.state.mkt_v += v_t;
        self.state.mid_dev += view.mid - p0;
        let mkt_dev = if self.state.mkt_v > 0.0 {
            self.state.mkt_dev / self.state.mkt_v
        } else {
            self.state.mid_dev / (self.state.t + 1) as f64
        };
        self.state.market_vwap_running = p0 + mkt_dev;

        let rho_actual = q / v_fill;
        let components = RewardComponents {
            c_arrival: self.state.fill_dev_mean().map_or(0.0, |f| side * f),
            c_vwap: self.state.fill_dev_mean().map_or(0.0, |f| side * (f - mkt_dev)),
            delta: if rho_target > 0.0 {
                self.sigma_minute * (rho_actual - rho_target).abs() / rho_target
            } else {
                0.0
            },
            zeta: self.sigma_minute * self.state.q_rem / self.state.order.q0,
        };
        let reward = components.reward(&self.weights);

        let action = chosen_action.unwrap_or_else(|| {
            let base = rho_target * v_t;
            if base > 0.0 {
                q / base - 1.0
            } else {
                0.0
            }
        });
        let info = StepInfo {
            t: self.state.t,
            minute: m,
            q,
            p_fill,
            scheduled_qty: scheduled,
            forced,
            market_volume: v_t,
            rho_target,
            action,
            impact_bps: impact * 1e4,
            immediate_impact_bps: immediate * 1e4,
            mid: view.mid,
            market_vwap_running: self.state.market_vwap_running,
        };

        self.state.t += 1;
        self.state.done = self.state.q_rem <= 0.0 || self.state.t >= self.state.order.horizon;
        if !self.state.done {
            let next = self.minute();
            self.state.expected_remaining_volume = self.day.expected_volume(next, self.state.order.end_minute());
        } else {
            self.state.expected_remaining_volume = 0.0;
        }
        Ok(StepOutcome { observation: self.observation(), reward, components, done: self.state.done, info })
    }
}

/// The quantity `q` with `executed + q == q0` in floating point, so the
/// executed total matches the order size exactly.
fn closing_quantity(executed: f64, q0: f64) -> f64 {
    let mut q = (q0 - executed).max(0.0);
    for _ in 0..4 {
        let s = executed + q;
        if s == q0 {
            break;
        }
        q = if s < q0 { q.next_up() } else { q.next_down() };
    }
    q
}
