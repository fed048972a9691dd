//! The policy interface and the schedule baselines.
//!
//! Action-space policies pick one of the nine actions and let the engine
//! size the trade from the target rate. Schedule baselines (TWAP, VWAP,
//! POV) bypass the action space and hand the engine a direct quantity; the
//! engine still clamps to inventory and sweeps the remainder at the last
//! minute.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{ActionSpace, Decision, Observation, StepContext};

pub type PolicyContext<'a> = StepContext<'a>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyMode {
    ActionSpace,
    DirectSchedule,
}

pub trait Policy: Send + Sync {
    fn name(&self) -> String;
    fn mode(&self) -> PolicyMode;
    fn decide(&self, obs: &Observation, ctx: &PolicyContext<'_>, rng: &mut ChaCha8Rng) -> Decision;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Twap,
    Vwap,
    Pov,
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineKind::Twap => "twap",
            BaselineKind::Vwap => "vwap",
            BaselineKind::Pov => "pov",
        })
    }
}

impl FromStr for BaselineKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "twap" => Ok(BaselineKind::Twap),
            "vwap" => Ok(BaselineKind::Vwap),
            "pov" => Ok(BaselineKind::Pov),
            other => Err(format!("unknown baseline {other:?}")),
        }
    }
}

/// Scheduled child quantity at horizon step `t`.
///
/// `profile` is the expected volume for each minute of the horizon and
/// `realised_volume` the market volume of minute `t`. A profile with no
/// volume falls back to TWAP.
pub fn baseline_quantity(kind: BaselineKind, q0: f64, profile: &[f64], realised_volume: f64, t: usize) -> f64 {
    let h = profile.len();
    debug_assert!(t < h, "step {t} outside horizon {h}");
    let twap = q0 / h as f64;
    let total: f64 = profile.iter().sum();
    if kind != BaselineKind::Twap && !(total > 0.0) {
        log::warn!("{kind}: empty volume profile, falling back to TWAP");
        return twap;
    }
    match kind {
        BaselineKind::Twap => twap,
        BaselineKind::Vwap => q0 * profile[t] / total,
        BaselineKind::Pov => q0 / total * realised_volume,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Baseline(pub BaselineKind);

impl Policy for Baseline {
    fn name(&self) -> String {
        self.0.to_string()
    }

    fn mode(&self) -> PolicyMode {
        PolicyMode::DirectSchedule
    }

    fn decide(&self, _obs: &Observation, ctx: &PolicyContext<'_>, _rng: &mut ChaCha8Rng) -> Decision {
        let o = ctx.order;
        let profile = &ctx.day.profile[o.start_minute..o.end_minute()];
        Decision::Quantity(baseline_quantity(self.0, o.q0, profile, ctx.market_volume, ctx.t))
    }
}

/// Uniform draw over the nine actions from a single uniform variate, so
/// runs sharing a stream see the same actions.
pub fn random_action(rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    ((u * ActionSpace::N as f64) as usize).min(ActionSpace::N - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn mode(&self) -> PolicyMode {
        PolicyMode::ActionSpace
    }

    fn decide(&self, _obs: &Observation, _ctx: &PolicyContext<'_>, rng: &mut ChaCha8Rng) -> Decision {
        Decision::Action(random_action(rng))
    }
}

/// Always plays the same action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantAction(pub usize);

impl Policy for ConstantAction {
    fn name(&self) -> String {
        format!("constant:{}", ActionSpace::VALUES[self.0])
    }

    fn mode(&self) -> PolicyMode {
        PolicyMode::ActionSpace
    }

    fn decide(&self, _obs: &Observation, _ctx: &PolicyContext<'_>, _rng: &mut ChaCha8Rng) -> Decision {
        Decision::Action(self.0)
    }
}
