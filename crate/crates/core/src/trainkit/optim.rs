use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Plain gradient descent, `θ ← θ − η·∇θ`.
    Sgd,
    /// Adaptive moments with bias correction.
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient added to the gradient before the update.
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            ..Self::adam(lr)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay.is_finite()
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(alloc::format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Per-parameter optimizer state, indexed by [`ParamId`].
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates every trainable parameter that has a gradient, except `skip`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, skip: &[ParamId]) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - libm::pow(c.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, self.step as f64);
        for (id, g) in grads.params() {
            if skip.contains(&id) || !store.get(id).requires_grad() {
                continue;
            }
            let p = store.get_mut(id).data_mut();
            match c.kind {
                OptimizerKind::Sgd => {
                    for (x, gi) in p.iter_mut().zip(g) {
                        *x -= c.lr * (gi + c.weight_decay * *x);
                    }
                }
                OptimizerKind::Adam => {
                    let i = id.index();
                    if self.m.len() <= i {
                        self.m.resize(i + 1, Vec::new());
                        self.v.resize(i + 1, Vec::new());
                    }
                    if self.m[i].is_empty() {
                        self.m[i] = vec![0.0; p.len()];
                        self.v[i] = vec![0.0; p.len()];
                    }
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for k in 0..p.len() {
                        let gk = g[k] + c.weight_decay * p[k];
                        m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
                        v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
                        let mh = m[k] / bc1;
                        let vh = v[k] / bc2;
                        p[k] -= c.lr * mh / (libm::sqrt(vh) + c.eps);
                    }
                }
            }
        }
    }
}
