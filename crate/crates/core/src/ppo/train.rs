use std::io::Write;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{clip_grad_norm, gae_advantages, ppo_loss_and_grads, Adam, Batch};
use super::net::ActorCritic;
use super::norm::RunningNorm;
use super::policy::{sample_categorical, Checkpoint, CHECKPOINT_VERSION};
use super::{PpoError, TrainConfig};
use crate::engine::{ActionSpace, Decision, Episode, Observation, RewardWeights, OBS_DIM};
use crate::marketdata::MarketUniverse;
use crate::orders::Order;
use crate::seeding::{derive_indexed, derive_seed};

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterLog {
    pub iteration: usize,
    pub timesteps: usize,
    pub episodes: usize,
    /// Mean summed reward of episodes that finished this iteration, in
    /// training units. `None` if none finished.
    pub mean_episode_reward: Option<f64>,
    pub mean_step_reward: f64,
    pub policy_objective: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub learning_rate: f64,
    pub clip: f64,
    pub updates: usize,
    pub early_stopped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<IterLog>,
}

pub fn write_train_log(log: &[IterLog], w: impl Write) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    for row in log {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

struct Env<'a> {
    rng: ChaCha8Rng,
    episode: Episode<'a>,
    obs: Observation,
    scale: f64,
    ep_return: f64,
}

struct StepResult {
    reward: f64,
    done: bool,
    finished_return: Option<f64>,
}

fn start_episode<'a>(
    orders: &[Order],
    universe: &'a MarketUniverse,
    weights: RewardWeights,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Episode<'a>, Observation, f64), PpoError> {
    let order = &orders[rng.random_range(0..orders.len())];
    let day = universe
        .day(&order.symbol, order.date)
        .ok_or_else(|| PpoError::Env(format!("no market data for {} {}", order.symbol, order.date)))?;
    let (ep, obs) = Episode::reset(order, day, weights).map_err(|e| PpoError::Env(e.to_string()))?;
    let unit = if config.reward_in_bps { 1e4 / ep.state().p0 } else { 1.0 };
    let scale = config.reward_scale * unit;
    Ok((ep, obs, scale))
}

impl<'a> Env<'a> {
    fn step(
        &mut self,
        action: usize,
        orders: &[Order],
        universe: &'a MarketUniverse,
        weights: RewardWeights,
        config: &TrainConfig,
    ) -> Result<StepResult, PpoError> {
        let out = self.episode.step(Decision::Action(action)).map_err(|e| PpoError::Env(e.to_string()))?;
        let reward = out.reward * self.scale;
        self.ep_return += reward;
        if out.done {
            let finished = self.ep_return;
            let (ep, obs, scale) = start_episode(orders, universe, weights, config, &mut self.rng)?;
            self.episode = ep;
            self.obs = obs;
            self.scale = scale;
            self.ep_return = 0.0;
            Ok(StepResult { reward, done: true, finished_return: Some(finished) })
        } else {
            self.obs = out.observation;
            Ok(StepResult { reward, done: false, finished_return: None })
        }
    }
}

/// Trains an actor-critic on episodes drawn uniformly from `orders`.
///
/// Environments advance in lock step: each step the normaliser absorbs the
/// current observations of every environment (in environment order), the
/// normalised rows go through one batched forward pass, and each
/// environment samples its action from its own stream. Results therefore
/// do not depend on `config.workers`.
pub fn train_ppo<'u>(
    universe: &'u MarketUniverse,
    orders: &[Order],
    weights: RewardWeights,
    config: &TrainConfig,
) -> Result<TrainOutcome, PpoError> {
    config.validate()?;
    if orders.is_empty() {
        return Err(PpoError::Usage("no training orders".into()));
    }
    if let Some(o) = orders.iter().find(|o| universe.day(&o.symbol, o.date).is_none()) {
        return Err(PpoError::Env(format!("order {} has no market data ({} {})", o.id, o.symbol, o.date)));
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "ppo-init"));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "ppo-shuffle"));
    let mut net = ActorCritic::new(config.net.clone(), &mut init_rng);
    let mut norm = RunningNorm::new(OBS_DIM, config.obs_clip);
    let mut adam = Adam::new(net.n_params());

    let mut envs = Vec::with_capacity(config.n_envs);
    for k in 0..config.n_envs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(config.seed, "ppo-env", k as u64));
        let (episode, obs, scale) = start_episode(orders, universe, weights, config, &mut rng)?;
        envs.push(Env { rng, episode, obs, scale, ep_return: 0.0 });
    }
    let pool = if config.workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.workers)
                .build()
                .map_err(|e| PpoError::Usage(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let e = config.n_envs;
    let n = config.rollout_size();
    let checkpoint = |net: &ActorCritic, norm: &RunningNorm, iterations: usize| Checkpoint {
        version: CHECKPOINT_VERSION,
        net: config.net.clone(),
        params: net.params.clone(),
        norm: norm.clone(),
        // Thread count does not affect results, so it stays out of the file.
        train: TrainConfig { workers: 0, ..config.clone() },
        iterations,
    };
    let mut log = Vec::with_capacity(config.iterations);

    for iter in 0..config.iterations {
        let last_good = checkpoint(&net, &norm, iter);
        let diverged =
            |reason: String| PpoError::Diverged { iteration: iter, reason, last_good: Box::new(last_good.clone()) };

        // Rollout.
        let mut obs_buf = Array2::<f64>::zeros((n, OBS_DIM));
        let mut probs_buf = Array2::<f64>::zeros((n, ActionSpace::N));
        let mut actions = vec![0usize; n];
        let mut old_lp = vec![0.0; n];
        let mut values = vec![0.0; n];
        let mut rewards = vec![0.0; n];
        let mut dones = vec![false; n];
        let mut finished = Vec::new();

        for s in 0..config.n_steps {
            norm.update(envs.iter().map(|env| env.obs.0.as_slice()));
            let base = s * e;
            for (k, env) in envs.iter().enumerate() {
                let x = norm.normalize(&env.obs.0);
                obs_buf.row_mut(base + k).iter_mut().zip(x).for_each(|(d, v)| *d = v);
            }
            let fwd = net
                .forward(obs_buf.slice(ndarray::s![base..base + e, ..]))
                .map_err(|err| diverged(err.to_string()))?;
            let probs = fwd.probs();
            let chosen: Vec<usize> = envs
                .iter_mut()
                .enumerate()
                .map(|(k, env)| sample_categorical(probs.row(k).as_slice().expect("contiguous row"), &mut env.rng))
                .collect();
            for k in 0..e {
                let a = chosen[k];
                actions[base + k] = a;
                old_lp[base + k] = probs[[k, a]].ln();
                values[base + k] = fwd.values[k];
                probs_buf.row_mut(base + k).assign(&probs.row(k));
            }

            let stepper = |(env, a): (&mut Env<'u>, &usize)| env.step(*a, orders, universe, weights, config);
            let results: Vec<Result<StepResult, PpoError>> = match &pool {
                Some(p) => p.install(|| envs.par_iter_mut().zip(chosen.par_iter()).map(stepper).collect()),
                None => envs.iter_mut().zip(chosen.iter()).map(stepper).collect(),
            };
            for (k, r) in results.into_iter().enumerate() {
                let r = r?;
                rewards[base + k] = r.reward;
                dones[base + k] = r.done;
                finished.extend(r.finished_return);
            }
        }

        let mut tail = Array2::<f64>::zeros((e, OBS_DIM));
        for (k, env) in envs.iter().enumerate() {
            tail.row_mut(k).iter_mut().zip(norm.normalize(&env.obs.0)).for_each(|(d, v)| *d = v);
        }
        let bootstrap = net.forward(tail.view()).map_err(|err| diverged(err.to_string()))?.values;

        // Advantages per environment.
        let mut advantages = vec![0.0; n];
        let mut returns = vec![0.0; n];
        for k in 0..e {
            let idx: Vec<usize> = (0..config.n_steps).map(|s| s * e + k).collect();
            let r: Vec<f64> = idx.iter().map(|&i| rewards[i]).collect();
            let d: Vec<bool> = idx.iter().map(|&i| dones[i]).collect();
            let mut v: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
            v.push(bootstrap[k]);
            let (a, ret) = gae_advantages(&r, &v, &d, config.gamma, config.gae_lambda)?;
            for (j, &i) in idx.iter().enumerate() {
                advantages[i] = a[j];
                returns[i] = ret[j];
            }
        }

        // Updates.
        let (lr, clip) = config.schedule(iter);
        let mut coefs = config.coefs();
        // A clip range decayed to exactly zero would freeze the policy head.
        coefs.clip = clip.max(1e-8);
        let mb = config.minibatch_size();
        let mut order: Vec<usize> = (0..n).collect();
        let mut acc = IterAcc::default();
        let mut early_stopped = false;
        'epochs: for _ in 0..config.epochs {
            order.shuffle(&mut shuffle_rng);
            for chunk in order.chunks(mb) {
                let obs = obs_buf.select(Axis(0), chunk);
                let old_probs = probs_buf.select(Axis(0), chunk);
                let acts: Vec<usize> = chunk.iter().map(|&i| actions[i]).collect();
                let lps: Vec<f64> = chunk.iter().map(|&i| old_lp[i]).collect();
                let rets: Vec<f64> = chunk.iter().map(|&i| returns[i]).collect();
                let advs = normalise(chunk.iter().map(|&i| advantages[i]).collect());
                let batch = Batch {
                    obs: obs.view(),
                    actions: &acts,
                    old_log_probs: &lps,
                    old_probs: old_probs.view(),
                    advantages: &advs,
                    returns: &rets,
                };
                let (stats, mut grads) = ppo_loss_and_grads(&net, &batch, &coefs).map_err(|err| diverged(err.to_string()))?;
                acc.add(&stats);
                if config.target_kl.is_some_and(|t| stats.kl > t) {
                    early_stopped = true;
                    break 'epochs;
                }
                acc.grad_norm += clip_grad_norm(&mut grads, config.max_grad_norm);
                adam.step(&mut net.params, &grads, lr);
                acc.updates += 1;
                if net.params.iter().any(|p| !p.is_finite()) {
                    return Err(diverged("non-finite parameters after update".into()));
                }
            }
        }

        let m = acc.measured.max(1) as f64;
        let row = IterLog {
            iteration: iter,
            timesteps: (iter + 1) * n,
            episodes: finished.len(),
            mean_episode_reward: (!finished.is_empty()).then(|| finished.iter().sum::<f64>() / finished.len() as f64),
            mean_step_reward: rewards.iter().sum::<f64>() / n as f64,
            policy_objective: acc.policy / m,
            value_loss: acc.value / m,
            entropy: acc.entropy / m,
            kl: acc.kl / m,
            clip_fraction: acc.clip_fraction / m,
            grad_norm: acc.grad_norm / acc.updates.max(1) as f64,
            learning_rate: lr,
            clip: coefs.clip,
            updates: acc.updates,
            early_stopped,
        };
        log::info!(
            "ppo iter {iter}: episodes {} mean reward {:?} kl {:.4} clip {:.3} entropy {:.3}",
            row.episodes,
            row.mean_episode_reward,
            row.kl,
            row.clip_fraction,
            row.entropy
        );
        log.push(row);
    }

    Ok(TrainOutcome { checkpoint: checkpoint(&net, &norm, config.iterations), log })
}

#[derive(Default)]
struct IterAcc {
    measured: usize,
    updates: usize,
    policy: f64,
    value: f64,
    entropy: f64,
    kl: f64,
    clip_fraction: f64,
    grad_norm: f64,
}

impl IterAcc {
    fn add(&mut self, s: &super::LossStats) {
        self.measured += 1;
        self.policy += s.policy_objective;
        self.value += s.value_loss;
        self.entropy += s.entropy;
        self.kl += s.kl;
        self.clip_fraction += s.clip_fraction;
    }
}

/// Zero mean, unit standard deviation (left centred if the spread is nil).
fn normalise(mut x: Vec<f64>) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    x.iter_mut().for_each(|v| *v = (*v - mean) / (sd + 1e-8));
    x
}
