//! Actor-critic MLP with a shared extractor, stored as one flat parameter
//! vector so optimisers and mutation operators can treat it as a point in
//! `R^n`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::PpoError;
use crate::engine::{ActionSpace, OBS_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Silu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Identity => z,
        }
    }

    /// Derivative at pre-activation `z`.
    fn grad(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub extractor: Vec<usize>,
    pub extractor_activation: Activation,
    pub heads: Vec<usize>,
    pub head_activation: Activation,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            extractor: vec![256, 256],
            extractor_activation: Activation::Relu,
            heads: vec![256, 256, 128],
            head_activation: Activation::Tanh,
        }
    }
}

impl NetConfig {
    pub fn small(width: usize) -> Self {
        NetConfig {
            extractor: vec![width, width],
            extractor_activation: Activation::Relu,
            heads: vec![width, width / 2],
            head_activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layer {
    w: usize,
    b: usize,
    n_in: usize,
    n_out: usize,
    act: Activation,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    extractor: Vec<Layer>,
    actor: Vec<Layer>,
    critic: Vec<Layer>,
    n_params: usize,
    extractor_params: usize,
}

fn layout(cfg: &NetConfig) -> Layout {
    let mut off = 0;
    let mut stack = |n_in: usize, widths: &[usize], act: Activation, last: Option<usize>| {
        let mut layers = Vec::new();
        let mut prev = n_in;
        let mut push = |n_out: usize, act: Activation, prev: &mut usize| {
            layers.push(Layer { w: off, b: off + n_out * *prev, n_in: *prev, n_out, act });
            off += n_out * *prev + n_out;
            *prev = n_out;
        };
        for &w in widths {
            push(w, act, &mut prev);
        }
        if let Some(n) = last {
            push(n, Activation::Identity, &mut prev);
        }
        layers
    };
    let extractor = stack(OBS_DIM, &cfg.extractor, cfg.extractor_activation, None);
    let extractor_params = extractor.last().map_or(0, |l| l.b + l.n_out);
    let feat = cfg.extractor.last().copied().unwrap_or(OBS_DIM);
    let actor = stack(feat, &cfg.heads, cfg.head_activation, Some(ActionSpace::N));
    let critic = stack(feat, &cfg.heads, cfg.head_activation, Some(1));
    Layout { extractor, actor, critic, n_params: off, extractor_params }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
struct Cache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    ext: Cache,
    actor: Cache,
    critic: Cache,
    pub logits: Array2<f64>,
    pub values: Array1<f64>,
}

impl Forward {
    pub fn probs(&self) -> Array2<f64> {
        softmax_rows(self.logits.view())
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|z| (z - m).exp());
        let s = row.sum();
        row.mapv_inplace(|e| e / s);
    }
    out
}

pub fn log_softmax_row(logits: ArrayView1<f64>) -> Array1<f64> {
    let m = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.mapv(|z| z - lse)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    config: NetConfig,
    layout: Layout,
    pub params: Vec<f64>,
}

impl ActorCritic {
    /// Orthogonal init: gain `sqrt(2)` on hidden layers, 0.01 on the policy
    /// logits and 1 on the value output, zero biases.
    pub fn new(config: NetConfig, rng: &mut ChaCha8Rng) -> Self {
        let layout = layout(&config);
        let mut params = vec![0.0; layout.n_params];
        let hidden = 2f64.sqrt();
        let init = |layers: &[Layer], last_gain: Option<f64>, params: &mut [f64], rng: &mut ChaCha8Rng| {
            for (i, l) in layers.iter().enumerate() {
                let gain = match last_gain {
                    Some(g) if i + 1 == layers.len() => g,
                    _ => hidden,
                };
                let w = orthogonal(l.n_out, l.n_in, gain, rng);
                params[l.w..l.w + l.n_out * l.n_in].copy_from_slice(w.as_slice().expect("standard layout"));
            }
        };
        init(&layout.extractor, None, &mut params, rng);
        init(&layout.actor, Some(0.01), &mut params, rng);
        init(&layout.critic, Some(1.0), &mut params, rng);
        ActorCritic { config, layout, params }
    }

    pub fn from_params(config: NetConfig, params: Vec<f64>) -> Result<Self, PpoError> {
        let layout = layout(&config);
        if params.len() != layout.n_params {
            return Err(PpoError::Checkpoint(format!(
                "expected {} parameters for this architecture, got {}",
                layout.n_params,
                params.len()
            )));
        }
        Ok(ActorCritic { config, layout, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn n_params(&self) -> usize {
        self.layout.n_params
    }

    /// Parameter range of the shared extractor.
    pub fn extractor_range(&self) -> std::ops::Range<usize> {
        0..self.layout.extractor_params
    }

    /// Zeroes the final actor and critic layers, giving a uniform policy
    /// and zero value everywhere.
    pub fn zero_output_layers(&mut self) {
        for l in [self.layout.actor.last(), self.layout.critic.last()].into_iter().flatten() {
            self.params[l.w..l.b + l.n_out].iter_mut().for_each(|p| *p = 0.0);
        }
    }

    pub fn forward(&self, obs: ArrayView2<f64>) -> Result<Forward, PpoError> {
        if let Some((i, _)) = obs.indexed_iter().find(|(_, x)| !x.is_finite()) {
            return Err(PpoError::Numeric(format!("non-finite observation at row {}, feature {}", i.0, i.1)));
        }
        let (feat, ext) = run_stack(&self.params, &self.layout.extractor, obs.to_owned());
        let (logits, actor) = run_stack(&self.params, &self.layout.actor, feat.clone());
        let (value, critic) = run_stack(&self.params, &self.layout.critic, feat);
        let values = value.index_axis(Axis(1), 0).to_owned();
        if logits.iter().chain(values.iter()).any(|x| !x.is_finite()) {
            let bad_rows: Vec<usize> = (0..logits.nrows())
                .filter(|&i| logits.row(i).iter().any(|x| !x.is_finite()) || !values[i].is_finite())
                .collect();
            return Err(PpoError::Numeric(format!(
                "non-finite network output in rows {bad_rows:?}; max |param| = {}",
                self.params.iter().fold(0.0f64, |a, p| a.max(p.abs()))
            )));
        }
        Ok(Forward { ext, actor, critic, logits, values })
    }

    /// Accumulates parameter gradients given `d loss / d logits` and
    /// `d loss / d values`.
    pub fn backward(&self, fwd: &Forward, d_logits: ArrayView2<f64>, d_values: ArrayView1<f64>) -> Vec<f64> {
        let mut grads = vec![0.0; self.layout.n_params];
        let d_feat_a = back_stack(&self.params, &self.layout.actor, &fwd.actor, d_logits.to_owned(), &mut grads);
        let d_feat_c = back_stack(
            &self.params,
            &self.layout.critic,
            &fwd.critic,
            d_values.insert_axis(Axis(1)).to_owned(),
            &mut grads,
        );
        back_stack(&self.params, &self.layout.extractor, &fwd.ext, d_feat_a + d_feat_c, &mut grads);
        grads
    }
}

fn weights<'p>(params: &'p [f64], l: &Layer) -> ArrayView2<'p, f64> {
    ArrayView2::from_shape((l.n_out, l.n_in), &params[l.w..l.w + l.n_out * l.n_in]).expect("layer shape")
}

fn run_stack(params: &[f64], layers: &[Layer], mut x: Array2<f64>) -> (Array2<f64>, Cache) {
    let mut cache = Cache { inputs: Vec::with_capacity(layers.len()), pre: Vec::with_capacity(layers.len()) };
    for l in layers {
        let w = weights(params, l);
        let b = ArrayView1::from(&params[l.b..l.b + l.n_out]);
        let z = x.dot(&w.t()) + b;
        let a = z.mapv(|v| l.act.apply(v));
        cache.inputs.push(std::mem::replace(&mut x, a));
        cache.pre.push(z);
    }
    (x, cache)
}

fn back_stack(params: &[f64], layers: &[Layer], cache: &Cache, mut d: Array2<f64>, grads: &mut [f64]) -> Array2<f64> {
    for (i, l) in layers.iter().enumerate().rev() {
        let z = &cache.pre[i];
        let dz = if l.act == Activation::Identity { d } else { d * &z.mapv(|v| l.act.grad(v)) };
        {
            let (gw, gb) = grads[l.w..l.b + l.n_out].split_at_mut(l.n_out * l.n_in);
            let mut gw = ArrayViewMut2::from_shape((l.n_out, l.n_in), gw).expect("layer shape");
            gw.scaled_add(1.0, &dz.t().dot(&cache.inputs[i]));
            for (g, s) in gb.iter_mut().zip(dz.sum_axis(Axis(0))) {
                *g += s;
            }
        }
        d = dz.dot(&weights(params, l));
    }
    d
}

/// `rows x cols` matrix with orthonormal rows or columns (whichever is
/// fewer), scaled by `gain`. Gram-Schmidt on Gaussian vectors.
fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let (n, m) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
        for u in &basis {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push(v);
        } else {
            // Numerically dependent draw; retry with a fresh vector.
            let _ = rng.random::<u32>();
        }
    }
    let mut out = Array2::zeros((rows, cols));
    for (i, u) in basis.iter().enumerate() {
        for (j, x) in u.iter().enumerate() {
            if rows <= cols {
                out[[i, j]] = gain * x;
            } else {
                out[[j, i]] = gain * x;
            }
        }
    }
    out
}
