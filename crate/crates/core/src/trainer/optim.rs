use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::tensor::{ParameterSet, Tensor};

/// Rescales every gradient by `max_norm / ||g||` when the global norm exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// AdamW with decoupled decay on `Decayed` parameters only; buffers are skipped.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, params: &ParameterSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, _, _, t)| vec![0.0; t.len()]).collect();
        Self {
            cfg,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn lr(&self) -> f64 {
        self.cfg.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn moments(&self, id: usize) -> (&[f64], &[f64]) {
        (&self.m[id], &self.v[id])
    }

    pub fn update(&mut self, params: &mut ParameterSet, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() || grads.len() != self.m.len() {
            return Err(shape_err(
                "adamw",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        for (id, g) in grads.iter().enumerate() {
            if g.shape() != params.value(id).shape() {
                return Err(shape_err(
                    "adamw",
                    format!("`{}`: {:?} vs {:?}", params.name(id), g.shape(), params.value(id).shape()),
                ));
            }
        }
        self.step += 1;
        let AdamWConfig {
            lr,
            weight_decay,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (id, g) in grads.iter().enumerate() {
            let kind = params.kind(id);
            if !kind.trainable() {
                continue;
            }
            let decay = if kind == crate::tensor::ParamKind::Decayed {
                1.0 - lr * weight_decay
            } else {
                1.0
            };
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            let p = params.value_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] = p[i] * decay - lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
