use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::model::encoder::ParamGrads;
use crate::model::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for one store; `None` until a parameter first
/// receives a gradient.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Option<Array2<f64>>>,
    pub v: Vec<Option<Array2<f64>>>,
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        Adam {
            config,
            state: AdamState {
                step: 0,
                m: vec![None; store.len()],
                v: vec![None; store.len()],
            },
        }
    }

    /// Updates unfrozen parameters that have a gradient. Frozen parameters
    /// are never written.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) {
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.state.step += 1;
        let t = self.state.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, (param, grad)) in store.iter_mut().zip(&grads.grads).enumerate() {
            let Some(g) = grad else { continue };
            if param.frozen {
                continue;
            }
            let m = self.state.m[i].get_or_insert_with(|| Array2::zeros(g.raw_dim()));
            let v = self.state.v[i].get_or_insert_with(|| Array2::zeros(g.raw_dim()));
            Zip::from(&mut param.value)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|w, m, v, &g| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}
