//! Adam optimizer over a [`ParamSet`].

use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Adam hyperparameters. Defaults are the conventional
/// `beta1 = 0.9, beta2 = 0.999, eps = 1e-8`.
#[derive(Clone, Copy, Debug)]
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

/// Adam state: first/second moment estimates per parameter element, plus the
/// shared step counter used for bias correction.
pub struct Adam {
    cfg: AdamConfig,
    step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    /// Zero-initialized state matching `params` element for element.
    pub fn new(cfg: AdamConfig, params: &ParamSet) -> Self {
        let sizes: Vec<usize> = params.iter().map(|(_, p)| p.value.len()).collect();
        Adam {
            cfg,
            step_count: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.cfg.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// Applies one update. `grads` is aligned with `params`; a `None` entry
    /// is treated as an all-zero gradient. Parameters registered with a
    /// clamp are bounded below after the update.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Tensor>]) {
        assert_eq!(grads.len(), params.len(), "gradient list does not match parameter set");
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
        for id in ids {
            let i = id.0;
            let param = params.get(id);
            let mut value = param.value.to_vec();
            let clamp = param.clamp_min;
            let shape = param.value.shape().to_vec();
            let zero = vec![0.0; value.len()];
            let grad = match &grads[i] {
                Some(g) => {
                    assert_eq!(g.len(), value.len(), "gradient size mismatch for {:?}", param.name);
                    g.data()
                }
                None => &zero,
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..value.len() {
                m[j] = self.cfg.beta1 * m[j] + (1.0 - self.cfg.beta1) * grad[j];
                v[j] = self.cfg.beta2 * v[j] + (1.0 - self.cfg.beta2) * grad[j] * grad[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                value[j] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
                if let Some(lo) = clamp {
                    value[j] = value[j].max(lo);
                }
            }
            params.set_value(id, Tensor::new(&shape, value));
        }
    }
}
