use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{ActorCritic, NetConfig};
use super::norm::RunningNorm;
use super::{PpoError, TrainConfig};
use crate::engine::{ActionSpace, Decision, Observation, OBS_DIM};
use crate::strategies::{Policy, PolicyContext, PolicyMode};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to rebuild a trained policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub net: NetConfig,
    pub params: Vec<f64>,
    pub norm: RunningNorm,
    pub train: TrainConfig,
    /// Iterations completed when the checkpoint was taken.
    pub iterations: usize,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), PpoError> {
        let text = serde_json::to_string(self).map_err(|e| PpoError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| PpoError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, PpoError> {
        let text = std::fs::read_to_string(path).map_err(|e| PpoError::Checkpoint(format!("{}: {e}", path.display())))?;
        let c: Checkpoint =
            serde_json::from_str(&text).map_err(|e| PpoError::Checkpoint(format!("{}: {e}", path.display())))?;
        if c.version != CHECKPOINT_VERSION {
            return Err(PpoError::Checkpoint(format!("unsupported checkpoint version {}", c.version)));
        }
        if c.norm.mean.len() != OBS_DIM {
            return Err(PpoError::Checkpoint(format!("normaliser has {} features, expected {OBS_DIM}", c.norm.mean.len())));
        }
        Ok(c)
    }

    pub fn network(&self) -> Result<ActorCritic, PpoError> {
        ActorCritic::from_params(self.net.clone(), self.params.clone())
    }
}

/// Inverse-CDF draw from a categorical distribution using one uniform.
pub fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// A trained network acting in the engine. The normaliser is frozen.
#[derive(Debug, Clone)]
pub struct PpoPolicy {
    net: ActorCritic,
    norm: RunningNorm,
    stochastic: bool,
    label: String,
}

impl PpoPolicy {
    pub fn new(net: ActorCritic, norm: RunningNorm, stochastic: bool) -> Self {
        PpoPolicy { net, norm, stochastic, label: "ppo".into() }
    }

    pub fn from_checkpoint(c: &Checkpoint, stochastic: bool) -> Result<Self, PpoError> {
        Ok(Self::new(c.network()?, c.norm.clone(), stochastic))
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn network(&self) -> &ActorCritic {
        &self.net
    }

    pub fn norm(&self) -> &RunningNorm {
        &self.norm
    }

    /// Action probabilities for one raw observation.
    pub fn probabilities(&self, obs: &Observation) -> Result<Vec<f64>, PpoError> {
        let x = Array2::from_shape_vec((1, OBS_DIM), self.norm.normalize(&obs.0)).expect("one observation row");
        Ok(self.net.forward(x.view())?.probs().row(0).to_vec())
    }
}

impl Policy for PpoPolicy {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn mode(&self) -> PolicyMode {
        PolicyMode::ActionSpace
    }

    fn decide(&self, obs: &Observation, _ctx: &PolicyContext<'_>, rng: &mut ChaCha8Rng) -> Decision {
        // Draw unconditionally so greedy and sampled runs consume the stream alike.
        let u_probs = self.probabilities(obs);
        let probs = match u_probs {
            Ok(p) => p,
            Err(e) => {
                log::warn!("{}: {e}; holding the target rate", self.label);
                let _: f64 = rng.random();
                return Decision::Action(ActionSpace::index_of(0.0).expect("neutral action"));
            }
        };
        if self.stochastic {
            Decision::Action(sample_categorical(&probs, rng))
        } else {
            let _: f64 = rng.random();
            let best = probs
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, p)| if *p > acc.1 { (i, *p) } else { acc });
            Decision::Action(best.0)
        }
    }
}
