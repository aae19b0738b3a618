//! Elastic weight consolidation for the growing captioning model.
//!
//! The penalty pulls every shared parameter towards its value after the
//! previous task, weighted by a diagonal empirical Fisher estimate. Weights
//! of words added since the snapshot (columns of `S` and rows of `C` beyond
//! the snapshot's vocabulary) are not regularized.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{backward, forward_teacher_forced, Example, Gradients, ModelDims, ModelParams, Modulation, ParamKind, Support};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EwcConfig {
    pub lambda: f64,
    /// Examples drawn from the finished task to estimate the Fisher diagonal.
    pub fisher_samples: usize,
}

impl Default for EwcConfig {
    fn default() -> Self {
        Self {
            lambda: 1000.0,
            fisher_samples: 500,
        }
    }
}

impl EwcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("EWC lambda must be >= 0, got {}", self.lambda)));
        }
        if self.fisher_samples == 0 {
            return Err(Error::Config("fisher_samples must be >= 1".into()));
        }
        Ok(())
    }
}

/// Diagonal Fisher estimate, stored in a parameter-shaped container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherDiag(pub ModelParams);

impl FisherDiag {
    /// Mean importance of each tensor.
    pub fn summary(&self) -> Vec<(&'static str, f64)> {
        ParamKind::ALL
            .iter()
            .map(|&k| {
                let t = self.0.tensor(k);
                (k.name(), t.iter().sum::<f64>() / t.len().max(1) as f64)
            })
            .collect()
    }
}

/// Parameters after the previous task, with the vocabulary size they cover.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub params: ModelParams,
    pub vocab_size: usize,
}

impl Snapshot {
    pub fn take(params: &ModelParams) -> Self {
        Self {
            params: params.clone(),
            vocab_size: params.dims.vocab_size,
        }
    }
}

/// Empirical Fisher: mean over `data[..n]` of the squared gradient of each
/// example's caption log-likelihood.
pub fn estimate_fisher(model: &ModelParams, data: &[Example], n: usize, support: &Support) -> Result<FisherDiag> {
    if data.is_empty() || n == 0 {
        return Err(Error::Domain("Fisher estimation needs at least one example".into()));
    }
    if n > data.len() {
        return Err(Error::Domain(format!(
            "asked for {n} Fisher samples but only {} examples are available",
            data.len()
        )));
    }
    let squares: Vec<Gradients> = data[..n]
        .par_iter()
        .map(|ex| {
            let trace = forward_teacher_forced(ex, model, support, Modulation::NONE)?;
            let mut g = backward(model, &trace, &ex.caption)?;
            for k in ParamKind::ALL {
                g.tensor_mut(k).iter_mut().for_each(|v| *v *= *v);
            }
            Ok(g)
        })
        .collect::<Result<_>>()?;
    let mut sum = model.zeros_like();
    for sq in &squares {
        sum.add_scaled(1.0, sq);
    }
    sum.scale(1.0 / n as f64);
    Ok(FisherDiag(sum))
}

/// Which entries of a model with `dims` the penalty covers: everything but
/// the embedding columns and classifier rows of words `>= old_vocab`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SharedSet {
    pub old_vocab: usize,
    pub dims: ModelDims,
}

impl SharedSet {
    /// Whether flat entry `index` of tensor `kind` is shared.
    pub fn contains(&self, kind: ParamKind, index: usize) -> bool {
        match kind {
            ParamKind::S => index % self.dims.vocab_size < self.old_vocab,
            ParamKind::C => index / self.dims.d_hidden < self.old_vocab,
            _ => true,
        }
    }

    pub fn excluded_entries(&self) -> usize {
        (self.dims.vocab_size - self.old_vocab) * (self.dims.d_emb + self.dims.d_hidden)
    }
}

pub fn shared_param_indices(old_vocab: usize, new_vocab: usize, dims: ModelDims) -> Result<SharedSet> {
    if new_vocab < old_vocab || dims.vocab_size != new_vocab {
        return Err(Error::Vocabulary(format!(
            "cannot share {old_vocab} old words with a model of {} words (expected {new_vocab})",
            dims.vocab_size
        )));
    }
    Ok(SharedSet { old_vocab, dims })
}

fn check_congruent(theta: &ModelParams, snap: &Snapshot, fisher: &FisherDiag, shared: &SharedSet) -> Result<()> {
    let d = theta.dims;
    let sd = snap.params.dims;
    if (d.d_feat, d.d_emb, d.d_hidden) != (sd.d_feat, sd.d_emb, sd.d_hidden)
        || fisher.0.dims != sd
        || shared.old_vocab > sd.vocab_size
        || shared.dims != d
    {
        return Err(Error::shape("EWC penalty", format!("{d:?}"), format!("{sd:?}")));
    }
    Ok(())
}

/// Calls `f(kind, idx, snapshot_idx)` for every shared entry.
fn for_each_shared(theta: &ModelParams, snap: &Snapshot, shared: &SharedSet, mut f: impl FnMut(ParamKind, usize, usize)) {
    let (v, sv) = (theta.dims.vocab_size, snap.params.dims.vocab_size);
    for kind in ParamKind::ALL {
        for idx in 0..theta.tensor(kind).len() {
            if !shared.contains(kind, idx) {
                continue;
            }
            // S gains columns, so its flat index differs between the models
            let sidx = match kind {
                ParamKind::S => (idx / v) * sv + idx % v,
                _ => idx,
            };
            f(kind, idx, sidx);
        }
    }
}

/// `λ Σ ½ F (θ − θ̂)²` over the shared entries, and its gradient
/// `λ F (θ − θ̂)` (zero elsewhere).
pub fn ewc_penalty_and_grad(
    theta: &ModelParams,
    snap: &Snapshot,
    fisher: &FisherDiag,
    cfg: &EwcConfig,
    shared: &SharedSet,
) -> Result<(f64, Gradients)> {
    check_congruent(theta, snap, fisher, shared)?;
    let mut grad = theta.zeros_like();
    let mut penalty = 0.0;
    for_each_shared(theta, snap, shared, |kind, idx, sidx| {
        let f = fisher.0.tensor(kind)[sidx];
        let diff = theta.tensor(kind)[idx] - snap.params.tensor(kind)[sidx];
        penalty += 0.5 * f * diff * diff;
        grad.tensor_mut(kind)[idx] = cfg.lambda * f * diff;
    });
    Ok((cfg.lambda * penalty, grad))
}

/// Implicit gradient step on the penalty alone:
/// `θ ← (θ + lr·λF·θ̂) / (1 + lr·λF)` on shared entries.
///
/// Applied right after a plain gradient step on the task loss, the pair is
/// the exact minimizer of the linearized task loss plus the penalty plus a
/// proximal term `‖θ − θ_old‖² / 2lr`. Unlike the explicit step it is stable
/// for any `lr·λF`, and every shared entry moves towards `θ̂`.
pub fn proximal_penalty_step(
    theta: &mut ModelParams,
    snap: &Snapshot,
    fisher: &FisherDiag,
    cfg: &EwcConfig,
    shared: &SharedSet,
    lr: f64,
) -> Result<()> {
    check_congruent(theta, snap, fisher, shared)?;
    if !(lr > 0.0) {
        return Err(Error::Domain(format!("learning rate must be positive, got {lr}")));
    }
    let mut updates = Vec::new();
    for_each_shared(theta, snap, shared, |kind, idx, sidx| {
        let k = lr * cfg.lambda * fisher.0.tensor(kind)[sidx];
        if k > 0.0 {
            let w = theta.tensor(kind)[idx];
            updates.push((kind, idx, (w + k * snap.params.tensor(kind)[sidx]) / (1.0 + k)));
        }
    });
    for (kind, idx, w) in updates {
        theta.tensor_mut(kind)[idx] = w;
    }
    Ok(())
}
