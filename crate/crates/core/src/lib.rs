//! Minute-bar optimal execution research toolkit.
//!
//! The crate is organised bottom-up:
//!
//! - [`marketdata`]: minute bars, cleaning, daily analytics and a synthetic generator
//! - [`impact`]: transient (propagator) impact with an exponential kernel, plus calibration
//! - [`orders`]: stratified parent-order generation with calendar separation
//! - [`engine`]: the episodic execution environment and vectorised runner
//! - [`strategies`]: the policy interface and TWAP/VWAP/POV/Random baselines
//! - [`ppo`]: a from-scratch actor-critic PPO trainer
//! - [`mapelites`]: liquidity x volatility quality-diversity search over policy weights
//! - [`evalreport`]: per-episode metrics, winsorised aggregation and report files

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod evalreport;
pub mod impact;
pub mod mapelites;
pub mod marketdata;
pub mod orders;
pub mod ppo;
pub mod seeding;
pub mod strategies;

pub use engine::{
    ActionSpace, Decision, EngineError, Episode, EpisodeResult, EpisodeState, Observation,
    RewardWeights, RunOutput,
};
pub use impact::{ImpactForm, ImpactParams, ImpactState};
pub use marketdata::{BarSeries, DailyStats, MarketDay, MarketUniverse, MinuteBar, SynthConfig};
pub use orders::{Order, OrderGenConfig, Side};
pub use strategies::{Policy, PolicyContext};

/// Trading minutes in one regular session.
pub const SESSION_MINUTES: usize = 390;
