//! GAE and the clipped PPO objective with analytic gradients.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::net::{log_softmax_row, ActorCritic};
use super::PpoError;
use crate::engine::ActionSpace;

/// Generalised advantage estimates for one trajectory segment.
///
/// `values` has one more entry than `rewards`: the bootstrap value of the
/// state after the last reward. `dones[t]` marks that the episode ended
/// with reward `t`, which cuts both the bootstrap and the trace.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), PpoError> {
    if values.len() != rewards.len() + 1 || dones.len() != rewards.len() {
        return Err(PpoError::Usage(format!(
            "gae needs values = rewards + 1 and dones = rewards, got {} / {} / {}",
            values.len(),
            rewards.len(),
            dones.len()
        )));
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        next = delta + gamma * lambda * live * next;
        adv[t] = next;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossCoefs {
    pub clip: f64,
    pub value: f64,
    pub entropy: f64,
    pub kl: f64,
}

/// A minibatch. `old_probs` are the full action distributions that
/// collected the data; `old_log_probs` the log-probabilities of the taken
/// actions.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub obs: ArrayView2<'a, f64>,
    pub actions: &'a [usize],
    pub old_log_probs: &'a [f64],
    pub old_probs: ArrayView2<'a, f64>,
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossStats {
    pub loss: f64,
    /// Clipped surrogate objective (to be maximised).
    pub policy_objective: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Mean `KL(old || new)` over the batch.
    pub kl: f64,
    pub clip_fraction: f64,
}

/// `-L_pi + c_v L_V - c_e L_H + c_kl L_KL`, averaged over the batch, and
/// its gradient with respect to every network parameter.
pub fn ppo_loss_and_grads(net: &ActorCritic, batch: &Batch<'_>, c: &LossCoefs) -> Result<(LossStats, Vec<f64>), PpoError> {
    let (stats, d_logits, d_values, fwd) = loss_terms(net, batch, c)?;
    let grads = net.backward(&fwd, d_logits.view(), d_values.view());
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(PpoError::Numeric(format!("non-finite gradient; batch stats {stats:?}")));
    }
    Ok((stats, grads))
}

/// The loss alone (used by finite-difference checks).
pub fn ppo_loss(net: &ActorCritic, batch: &Batch<'_>, c: &LossCoefs) -> Result<LossStats, PpoError> {
    loss_terms(net, batch, c).map(|t| t.0)
}

type Terms = (LossStats, Array2<f64>, Array1<f64>, super::net::Forward);

fn loss_terms(net: &ActorCritic, batch: &Batch<'_>, c: &LossCoefs) -> Result<Terms, PpoError> {
    let b = batch.actions.len();
    if b == 0 {
        return Err(PpoError::Usage("empty batch".into()));
    }
    if batch.obs.nrows() != b || batch.old_log_probs.len() != b || batch.advantages.len() != b || batch.returns.len() != b {
        return Err(PpoError::Usage("batch fields have different lengths".into()));
    }
    let fwd = net.forward(batch.obs)?;
    let nb = b as f64;
    let mut d_logits = Array2::zeros((b, ActionSpace::N));
    let mut d_values = Array1::zeros(b);
    let mut s = LossStats::default();
    for i in 0..b {
        let logp = log_softmax_row(fwd.logits.row(i));
        let p = logp.mapv(f64::exp);
        let a = batch.actions[i];
        let adv = batch.advantages[i];
        let ratio = (logp[a] - batch.old_log_probs[i]).exp();
        let clipped = ratio.clamp(1.0 - c.clip, 1.0 + c.clip);
        let (u, k) = (ratio * adv, clipped * adv);
        s.policy_objective += u.min(k);
        if (ratio - 1.0).abs() > c.clip {
            s.clip_fraction += 1.0;
        }
        // Gradient flows only through the unclipped branch when it is the min.
        let g_pi = if u <= k { ratio * adv } else { 0.0 };

        let h: f64 = -p.iter().zip(logp.iter()).map(|(p, l)| p * l).sum::<f64>();
        s.entropy += h;

        let old = batch.old_probs.row(i);
        let kl: f64 = old
            .iter()
            .zip(logp.iter())
            .filter(|(o, _)| **o > 0.0)
            .map(|(o, l)| o * (o.ln() - l))
            .sum();
        s.kl += kl;

        for j in 0..ActionSpace::N {
            let onehot = if j == a { 1.0 } else { 0.0 };
            let d_pi = g_pi * (onehot - p[j]);
            let d_h = -p[j] * (logp[j] + h);
            let d_kl = p[j] - old[j];
            d_logits[[i, j]] = (-d_pi - c.entropy * d_h + c.kl * d_kl) / nb;
        }

        let err = fwd.values[i] - batch.returns[i];
        s.value_loss += err * err;
        d_values[i] = c.value * 2.0 * err / nb;
    }
    s.policy_objective /= nb;
    s.value_loss /= nb;
    s.entropy /= nb;
    s.kl /= nb;
    s.clip_fraction /= nb;
    s.loss = -s.policy_objective + c.value * s.value_loss - c.entropy * s.entropy + c.kl * s.kl;
    if !s.loss.is_finite() {
        return Err(PpoError::Numeric(format!(
            "non-finite loss; batch of {b}, mean advantage {}, mean return {}",
            batch.advantages.iter().sum::<f64>() / nb,
            batch.returns.iter().sum::<f64>() / nb
        )));
    }
    Ok((s, d_logits, d_values, fwd))
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-5 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Rescales `grads` in place to global norm at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}
