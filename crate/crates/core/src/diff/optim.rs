use serde::{Deserialize, Serialize};

use super::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over the trainable blocks of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = |b: &super::ParamBlock| vec![0.0; b.tensor.len()];
        Self {
            config,
            step: 0,
            m: store.blocks().iter().map(zeros).collect(),
            v: store.blocks().iter().map(zeros).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update. Trainable blocks without a gradient are treated as
    /// having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, &[f64])]) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::Shape(
                "optimizer state does not match parameter store".into(),
            ));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for &(id, g) in grads {
            if !store.block(id).trainable {
                continue;
            }
            let p = store.get_mut(id).data_mut();
            if g.len() != p.len() {
                return Err(Error::Shape(format!(
                    "gradient of {} for a block of {}",
                    g.len(),
                    p.len()
                )));
            }
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlateauMode {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlateauConfig {
    pub enabled: bool,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    pub mode: PlateauMode,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            factor: 0.5,
            patience: 5,
            min_lr: 1e-6,
            mode: PlateauMode::Max,
        }
    }
}

/// Reduce-on-plateau rule: after more than `patience` consecutive
/// non-improving epochs the learning rate is multiplied by `factor` (never
/// below `min_lr`) and the counter restarts.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub config: PlateauConfig,
    best: Option<f64>,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(config: PlateauConfig) -> Self {
        Self {
            config,
            best: None,
            bad_epochs: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Records one epoch's metric and returns the learning rate to use next.
    pub fn observe(&mut self, metric: f64, lr: f64) -> f64 {
        let improved = match (self.best, self.config.mode) {
            (None, _) => true,
            (Some(b), PlateauMode::Max) => metric > b,
            (Some(b), PlateauMode::Min) => metric < b,
        };
        if improved {
            self.best = Some(metric);
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.config.enabled && self.bad_epochs > self.config.patience {
            self.bad_epochs = 0;
            return (lr * self.config.factor).max(self.config.min_lr);
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tensor;

    fn scalar_store(w: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(w), true).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let (mut s, id) = scalar_store(1.5);
        let mut adam = Adam::new(&s, AdamConfig::default());
        adam.step(&mut s, &[(id, &[0.0])]).unwrap();
        assert_eq!(s.get(id).item(), 1.5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, id) = scalar_store(0.0);
        let mut adam = Adam::new(
            &s,
            AdamConfig {
                lr: 0.1,
                ..Default::default()
            },
        );
        adam.step(&mut s, &[(id, &[1.0])]).unwrap();
        assert!((s.get(id).item() + 0.1).abs() < 1e-6);
    }

    #[test]
    fn converges_on_quadratic() {
        let (mut s, id) = scalar_store(0.0);
        let mut adam = Adam::new(
            &s,
            AdamConfig {
                lr: 0.1,
                ..Default::default()
            },
        );
        for _ in 0..500 {
            let w = s.get(id).item();
            adam.step(&mut s, &[(id, &[2.0 * (w - 3.0)])]).unwrap();
        }
        assert!((s.get(id).item() - 3.0).abs() < 1e-3);
    }

    #[test]
    fn plateau_script() {
        let mut p = PlateauScheduler::new(PlateauConfig {
            patience: 2,
            ..Default::default()
        });
        let metrics = [0.5, 0.6, 0.6, 0.59, 0.58, 0.7, 0.7, 0.7, 0.7];
        let mut lr = 1.0;
        let mut lrs = vec![];
        for m in metrics {
            lr = p.observe(m, lr);
            lrs.push(lr);
        }
        assert_eq!(lrs, vec![1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5, 0.25]);
    }
}
