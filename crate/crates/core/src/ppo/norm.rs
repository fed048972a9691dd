use serde::{Deserialize, Serialize};

use crate::engine::OBS_DIM;

/// Per-feature running mean and variance, merged batch-wise with Chan's
/// parallel update so that streaming and one-shot updates agree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub mean: Vec<f64>,
    /// Population variance.
    pub var: Vec<f64>,
    pub count: f64,
    pub clip: f64,
    pub epsilon: f64,
}

impl RunningNorm {
    pub fn new(dim: usize, clip: f64) -> Self {
        RunningNorm { mean: vec![0.0; dim], var: vec![0.0; dim], count: 0.0, clip, epsilon: 1e-8 }
    }

    pub fn for_observations() -> Self {
        Self::new(OBS_DIM, 10.0)
    }

    pub fn update<'a>(&mut self, rows: impl IntoIterator<Item = &'a [f64]>) {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        if rows.is_empty() {
            return;
        }
        let n = rows.len() as f64;
        let dim = self.mean.len();
        let mut bmean = vec![0.0; dim];
        for r in &rows {
            for (m, x) in bmean.iter_mut().zip(r.iter()) {
                *m += x;
            }
        }
        bmean.iter_mut().for_each(|m| *m /= n);
        let mut bvar = vec![0.0; dim];
        for r in &rows {
            for ((v, x), m) in bvar.iter_mut().zip(r.iter()).zip(&bmean) {
                *v += (x - m) * (x - m);
            }
        }
        bvar.iter_mut().for_each(|v| *v /= n);

        let total = self.count + n;
        for i in 0..dim {
            let delta = bmean[i] - self.mean[i];
            let m2 = self.var[i] * self.count + bvar[i] * n + delta * delta * self.count * n / total;
            self.mean[i] += delta * n / total;
            self.var[i] = m2 / total;
        }
        self.count = total;
    }

    /// `clip((x - mean) / sqrt(var + eps))`.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.var)
            .map(|((x, m), v)| ((x - m) / (v + self.epsilon).sqrt()).clamp(-self.clip, self.clip))
            .collect()
    }
}
