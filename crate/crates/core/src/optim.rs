//! First-order optimizers with optional per-entry step masks.
//!
//! A mask multiplies the final step of each entry. Entries whose mask is
//! exactly zero are skipped, so they stay bit-identical no matter what the
//! optimizer state holds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamKind};
use crate::ratt::BackwardMasks;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            ..Self::default()
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("Adam eps must be positive".into()));
        }
        Ok(())
    }
}

/// Optimizer state for one training session. Tensors are addressed by a
/// caller-chosen slot number; the moment buffers of a slot are sized on its
/// first update.
#[derive(Clone, Debug)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

/// Slots used by [`Optimizer::step_params`] are `0..15`; callers may use
/// slots from here on for their own tensors.
pub const FIRST_FREE_SLOT: usize = ParamKind::ALL.len();

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Self {
        Self {
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    /// Advances the step counter; call once per batch before the updates.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn update(&mut self, slot: usize, w: &mut [f64], g: &[f64], mask: Option<&[f64]>) {
        debug_assert_eq!(w.len(), g.len());
        match self.cfg.kind {
            OptimizerKind::Sgd => {
                let lr = self.cfg.lr;
                match mask {
                    None => w.iter_mut().zip(g).for_each(|(w, g)| *w -= lr * g),
                    Some(b) => crate::ratt::masked_sgd_in_place(w, g, b, lr),
                }
            }
            OptimizerKind::Adam => self.adam(slot, w, g, mask),
        }
    }

    fn adam(&mut self, slot: usize, w: &mut [f64], g: &[f64], mask: Option<&[f64]>) {
        if self.m.len() <= slot {
            self.m.resize_with(slot + 1, Vec::new);
            self.v.resize_with(slot + 1, Vec::new);
        }
        let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
        if m.len() != w.len() {
            m.resize(w.len(), 0.0);
            v.resize(w.len(), 0.0);
        }
        let OptimizerConfig { lr, beta1, beta2, eps, .. } = self.cfg;
        let t = self.t.max(1) as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for k in 0..w.len() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            let step = lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            match mask {
                None => w[k] -= step,
                Some(b) if b[k] != 0.0 => w[k] -= b[k] * step,
                Some(_) => {}
            }
        }
    }

    /// Updates every model tensor; `masks` gates each entry's step.
    pub fn step_params(&mut self, params: &mut ModelParams, grads: &ModelParams, masks: Option<&BackwardMasks>) {
        for (slot, kind) in ParamKind::ALL.into_iter().enumerate() {
            let mask = masks.map(|b| b.for_kind(kind));
            self.update(slot, params.tensor_mut(kind), grads.tensor(kind), mask);
        }
    }
}
