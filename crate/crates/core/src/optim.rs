//! Adam with decoupled weight decay and a linear warmup/decay schedule.

use crate::error::{Error, Result};
use crate::graph::{Gradients, Matrix};
use crate::params::ParamStore;

/// Linear ramp from 0 to `peak_lr` over the first `warmup_proportion` of
/// the steps, then linear decay to 0 at `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, warmup_proportion: f64, peak_lr: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Validation("schedule needs at least one step".into()));
    }
    if step > total_steps {
        return Err(Error::Validation(format!("step {step} past total {total_steps}")));
    }
    let warmup = warmup_proportion * total_steps as f64;
    let s = step as f64;
    Ok(if s < warmup {
        peak_lr * s / warmup
    } else {
        let rest = total_steps as f64 - warmup;
        if rest <= 0.0 {
            0.0
        } else {
            peak_lr * (total_steps as f64 - s) / rest
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    /// Decay every tensor, ignoring the per-tensor exemption flags.
    pub decay_all: bool,
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamConfig,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

impl AdamW {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || store.ids().map(|id| Matrix::zeros(store.value(id).raw_dim())).collect();
        AdamW {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One bias-corrected update. Decay is applied directly to the weights
    /// (scaled by `lr`) for tensors flagged as decaying.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.t += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
            weight_decay,
            ..
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let decay = self.config.decay_all || store.decays(id);
            let i = id.index();
            if let Some(g) = grads.get(id) {
                self.m[i].zip_mut_with(g, |m, &g| *m = beta1 * *m + (1.0 - beta1) * g);
                self.v[i].zip_mut_with(g, |v, &g| *v = beta2 * *v + (1.0 - beta2) * g * g);
            } else {
                self.m[i].mapv_inplace(|m| beta1 * m);
                self.v[i].mapv_inplace(|v| beta2 * v);
            }
            let (m, v) = (&self.m[i], &self.v[i]);
            let w = store.value_mut(id);
            ndarray::Zip::from(w).and(m).and(v).for_each(|w, &m, &v| {
                let update = (m / c1) / ((v / c2).sqrt() + epsilon);
                let decayed = if decay { weight_decay * *w } else { 0.0 };
                *w -= lr * (update + decayed);
            });
        }
    }
}
