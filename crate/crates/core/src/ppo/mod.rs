//! Actor-critic PPO written directly against the execution engine.
//!
//! The network lives in one flat `Vec<f64>` (see [`net`]), gradients are
//! analytic, and the optimiser is a plain Adam. Training runs lock-step
//! vectorised environments so that a single batched forward pass serves
//! every environment at each step.

pub mod loss;
pub mod net;
pub mod norm;
pub mod policy;
pub mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use loss::{gae_advantages, ppo_loss, ppo_loss_and_grads, Adam, Batch, LossCoefs, LossStats};
pub use net::{Activation, ActorCritic, NetConfig};
pub use norm::RunningNorm;
pub use policy::{Checkpoint, PpoPolicy};
pub use train::{train_ppo, write_train_log, IterLog, TrainOutcome};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PpoError {
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("training diverged at iteration {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String, last_good: Box<Checkpoint> },
    #[error("environment: {0}")]
    Env(String),
}

/// Minibatch sizes chosen by [`TrainConfig::minibatch_size`] when none is
/// set explicitly.
pub const AUTO_MINIBATCH: [usize; 3] = [2048, 4096, 8192];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_envs: usize,
    /// Rollout length per environment per iteration.
    pub n_steps: usize,
    pub iterations: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub clip: f64,
    pub clip_decay: bool,
    /// Epochs stop once the minibatch KL exceeds this.
    pub target_kl: Option<f64>,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub kl_coef: f64,
    pub max_grad_norm: f64,
    pub learning_rate: f64,
    pub lr_decay: bool,
    /// `None` picks from [`AUTO_MINIBATCH`] by rollout size.
    pub minibatch: Option<usize>,
    /// Train on rewards expressed in basis points of the arrival price,
    /// which puts every symbol on one scale.
    pub reward_in_bps: bool,
    /// Multiplies training rewards after the bps conversion; keeps value
    /// targets near unit scale so the critic does not swamp the shared
    /// extractor.
    pub reward_scale: f64,
    pub obs_clip: f64,
    pub net: NetConfig,
    /// Threads stepping environments; 0 or 1 steps them in order.
    pub workers: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_envs: 8,
            n_steps: 2048,
            iterations: 50,
            gamma: 0.999,
            gae_lambda: 0.95,
            epochs: 3,
            clip: 0.18,
            clip_decay: true,
            target_kl: Some(0.02),
            entropy_coef: 0.006,
            value_coef: 0.55,
            kl_coef: 0.0,
            max_grad_norm: 0.5,
            learning_rate: 3e-4,
            lr_decay: true,
            minibatch: None,
            reward_in_bps: true,
            reward_scale: 0.01,
            obs_clip: 10.0,
            net: NetConfig::default(),
            workers: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: String| Err(PpoError::Usage(m));
        if self.n_envs == 0 || self.n_steps == 0 || self.iterations == 0 || self.epochs == 0 {
            return bad("n_envs, n_steps, iterations and epochs must be positive".into());
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad(format!("clip must lie in (0, 1), got {}", self.clip));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]".into());
        }
        let coefs = [self.reward_scale, self.entropy_coef, self.value_coef, self.kl_coef, self.max_grad_norm, self.learning_rate, self.obs_clip];
        if coefs.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return bad("coefficients must be finite and non-negative".into());
        }
        if self.target_kl.is_some_and(|k| !(k > 0.0)) {
            return bad("target_kl must be positive".into());
        }
        if self.minibatch == Some(0) {
            return bad("minibatch must be positive".into());
        }
        if self.net.heads.is_empty() {
            return bad("network heads need at least one hidden layer".into());
        }
        Ok(())
    }

    pub fn rollout_size(&self) -> usize {
        self.n_envs * self.n_steps
    }

    pub fn minibatch_size(&self) -> usize {
        let n = self.rollout_size();
        let m = self.minibatch.unwrap_or(match n {
            0..=16_384 => AUTO_MINIBATCH[0],
            16_385..=65_536 => AUTO_MINIBATCH[1],
            _ => AUTO_MINIBATCH[2],
        });
        m.min(n)
    }

    pub fn coefs(&self) -> LossCoefs {
        LossCoefs { clip: self.clip, value: self.value_coef, entropy: self.entropy_coef, kl: self.kl_coef }
    }

    /// Learning rate and clip range for iteration `i` (0-based) after linear decay.
    pub fn schedule(&self, i: usize) -> (f64, f64) {
        let frac = 1.0 - i as f64 / self.iterations as f64;
        let lr = if self.lr_decay { self.learning_rate * frac } else { self.learning_rate };
        let clip = if self.clip_decay { self.clip * frac } else { self.clip };
        (lr, clip)
    }
}
