//! Transient market impact with an exponential propagator kernel.
//!
//! Instantaneous impact is a power law in participation, `gamma * (q/V)^beta`,
//! and each trade's impact decays as `g0 * exp(-lag / tau)`. Because the
//! kernel is exponential the cumulative impact is maintained recursively in
//! [`ImpactState`].

mod calibration;

pub use calibration::{
    calibrate_propagator, compare_impact_forms, read_calibration_store, segments_from_universe,
    write_calibration_store, write_lag_study, CalibrationFit, CalibrationReport, CalibrationSegment,
    CalibrationStore, FormLagSummary, StoreRecord, CALIBRATION_GAMMA, DEFAULT_LAGS, RETAIN_R2,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TAU_MIN: f64 = 0.5;
pub const TAU_MAX: f64 = 180.0;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ImpactError {
    #[error("impact domain error: {0}")]
    Domain(String),
    #[error("invalid impact parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("degenerate calibration input: {0}")]
    Degenerate(String),
    #[error("invalid calibration request: {0}")]
    Invalid(String),
    #[error("calibration store {path}: {msg}")]
    Store { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImpactForm {
    Linear,
    Sqrt,
}

impl ImpactForm {
    pub const ALL: [ImpactForm; 2] = [ImpactForm::Linear, ImpactForm::Sqrt];

    pub fn beta(self) -> f64 {
        match self {
            ImpactForm::Linear => 1.0,
            ImpactForm::Sqrt => 0.5,
        }
    }
}

impl fmt::Display for ImpactForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ImpactForm::Linear => "linear",
            ImpactForm::Sqrt => "sqrt",
        })
    }
}

impl FromStr for ImpactForm {
    type Err = ImpactError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(ImpactForm::Linear),
            "sqrt" => Ok(ImpactForm::Sqrt),
            other => Err(ImpactError::InvalidParams(format!("unknown impact form {other:?}"))),
        }
    }
}

/// Calibrated parameters of the propagator model for one symbol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpactParams {
    pub gamma: f64,
    pub beta: f64,
    pub g0: f64,
    /// Decay horizon in minutes.
    pub tau: f64,
    pub form: ImpactForm,
}

impl ImpactParams {
    pub fn new(form: ImpactForm, gamma: f64, g0: f64, tau: f64) -> Result<Self, ImpactError> {
        let p = ImpactParams { gamma, beta: form.beta(), g0, tau, form };
        p.validate()?;
        Ok(p)
    }

    /// A model that never moves prices.
    pub fn zero() -> Self {
        ImpactParams { gamma: 0.0, beta: 0.5, g0: 0.0, tau: 1.0, form: ImpactForm::Sqrt }
    }

    pub fn validate(&self) -> Result<(), ImpactError> {
        let err = |m: String| Err(ImpactError::InvalidParams(m));
        if !(self.g0 >= 0.0 && self.g0.is_finite()) {
            return err(format!("g0 must be finite and >= 0, got {}", self.g0));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return err(format!("gamma must be finite and >= 0, got {}", self.gamma));
        }
        if !(TAU_MIN..=TAU_MAX).contains(&self.tau) {
            return err(format!("tau {} outside [{TAU_MIN}, {TAU_MAX}]", self.tau));
        }
        if self.beta != self.form.beta() {
            return err(format!("beta {} inconsistent with form {}", self.beta, self.form));
        }
        Ok(())
    }

    pub fn decay_per_minute(&self) -> f64 {
        (-1.0 / self.tau).exp()
    }
}

/// `gamma * (q/V)^beta`.
pub fn instant_impact(q: f64, volume: f64, params: &ImpactParams) -> Result<f64, ImpactError> {
    if !(volume > 0.0) {
        return Err(ImpactError::Domain(format!("market volume must be positive, got {volume}")));
    }
    if !(q >= 0.0) {
        return Err(ImpactError::Domain(format!("traded quantity must be non-negative, got {q}")));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    Ok(params.gamma * (q / volume).powf(params.beta))
}

/// Impact of a signed participation `x` (for example a sided-volume
/// imbalance): `gamma * |x|^beta * sign(x)`.
pub fn signed_instant_impact(x: f64, params: &ImpactParams) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        params.gamma * x.abs().powf(params.beta) * x.signum()
    }
}

/// `g0 * exp(-lag / tau)`.
pub fn kernel_weight(lag: f64, params: &ImpactParams) -> f64 {
    params.g0 * (-lag / params.tau).exp()
}

/// A trade entering the impact state: quantity, market volume in the same
/// minute, and sign (+1 buy, -1 sell).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trade {
    pub q: f64,
    pub volume: f64,
    pub sign: f64,
}

impl Trade {
    pub fn none() -> Self {
        Trade { q: 0.0, volume: 0.0, sign: 1.0 }
    }
}

/// Running cumulative impact `I_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactState {
    pub accumulator: f64,
    pub params: ImpactParams,
    pub last_update_minute: u32,
}

impl ImpactState {
    pub fn new(params: ImpactParams, minute: u32) -> Self {
        ImpactState { accumulator: 0.0, params, last_update_minute: minute }
    }

    /// Decays the accumulator by `advance` minutes, then adds the new trade
    /// at lag zero with weight `g0`. A zero-quantity trade is pure decay.
    pub fn propagate(&self, trade: Trade, advance: u32) -> Result<ImpactState, ImpactError> {
        let decayed = self.accumulator * (-f64::from(advance) / self.params.tau).exp();
        let added = if trade.q > 0.0 {
            self.params.g0 * trade.sign * instant_impact(trade.q, trade.volume, &self.params)?
        } else {
            0.0
        };
        Ok(ImpactState {
            accumulator: decayed + added,
            params: self.params,
            last_update_minute: self.last_update_minute + advance,
        })
    }
}

/// `p_vwap * (1 + side * impact)`.
pub fn fill_price(p_vwap: f64, side: f64, impact: f64) -> f64 {
    p_vwap * (1.0 + side * impact)
}
