//! Recurrent attention to transient tasks.
//!
//! Each task owns one column of two task-embedding matrices. Squashing a
//! column through a scaled sigmoid gives the task's attention over the
//! embedding units (`a_x`) and the hidden units (`a_h`); a third, binary
//! mask (`a_s`) marks the task's words. The running elementwise maximum of
//! the masks of all finished tasks defines backward masks that scale every
//! weight's update by `1 − min(attention of the two units it connects)`, so
//! weights between units that earlier tasks rely on stop moving.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{seeded_uniform, sigmoid, Matrix, Rng, Vector};
use crate::model::{AttentionGrads, ModelDims, ModelParams, ParamKind};

/// Largest magnitude of `s · A` fed to the mask sigmoid.
pub const PREACT_CLAMP: f64 = 50.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RattConfig {
    pub s_max: f64,
    /// Weight of the sparsity term.
    pub sparsity_weight: f64,
    /// Ablation switches: a disabled mask is the identity in the forward
    /// pass and takes no part in the backward masks.
    pub mask_embed: bool,
    pub mask_hidden: bool,
    pub mask_vocab: bool,
    /// Threshold snapshotted masks at 0.5 before they are stored.
    pub binarize: bool,
    /// Task embeddings start uniform in `[-embedding_init, embedding_init)`.
    pub embedding_init: f64,
}

impl Default for RattConfig {
    fn default() -> Self {
        Self {
            s_max: 400.0,
            sparsity_weight: 0.5,
            mask_embed: true,
            mask_hidden: true,
            mask_vocab: true,
            binarize: false,
            embedding_init: 1.0,
        }
    }
}

impl RattConfig {
    pub fn selection(&self) -> MaskSelection {
        MaskSelection {
            embed: self.mask_embed,
            hidden: self.mask_hidden,
            vocab: self.mask_vocab,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s_max >= 1.0) || !self.s_max.is_finite() {
            return Err(Error::Config(format!("s_max must be >= 1, got {}", self.s_max)));
        }
        if !(self.sparsity_weight >= 0.0) {
            return Err(Error::Config("sparsity_weight must be >= 0".into()));
        }
        if !(self.embedding_init > 0.0) {
            return Err(Error::Config("embedding_init must be > 0".into()));
        }
        Ok(())
    }
}

/// Which of the three masks take part.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSelection {
    pub embed: bool,
    pub hidden: bool,
    pub vocab: bool,
}

impl MaskSelection {
    pub const ALL: MaskSelection = MaskSelection {
        embed: true,
        hidden: true,
        vocab: true,
    };

    pub fn any(&self) -> bool {
        self.embed || self.hidden || self.vocab
    }
}

/// `A_x` (`d_emb × K`) and `A_h` (`d_hidden × K`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskEmbeddings {
    pub a_x: Matrix,
    pub a_h: Matrix,
}

impl TaskEmbeddings {
    pub fn init(d_emb: usize, d_hidden: usize, tasks: usize, range: f64, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            a_x: seeded_uniform(rng, -range, range, d_emb, tasks)?,
            a_h: seeded_uniform(rng, -range, range, d_hidden, tasks)?,
        })
    }

    pub fn tasks(&self) -> usize {
        self.a_x.cols()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSet {
    pub task: usize,
    pub scale: f64,
    pub a_x: Vector,
    pub a_h: Vector,
    pub a_s: Vec<bool>,
}

impl MaskSet {
    pub fn binarized(&self) -> MaskSet {
        MaskSet {
            a_x: threshold(&self.a_x),
            a_h: threshold(&self.a_h),
            ..self.clone()
        }
    }
}

fn threshold(v: &Vector) -> Vector {
    Vector(v.iter().map(|&a| if a >= 0.5 { 1.0 } else { 0.0 }).collect())
}

/// Elementwise maximum over the masks of all finished tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CumulativeMasks {
    pub a_x: Vector,
    pub a_h: Vector,
    pub a_s: Vec<bool>,
}

impl CumulativeMasks {
    pub fn empty(d_emb: usize, d_hidden: usize) -> Self {
        Self {
            a_x: Vector::zeros(d_emb),
            a_h: Vector::zeros(d_hidden),
            a_s: Vec::new(),
        }
    }

    pub fn binarized(&self) -> CumulativeMasks {
        CumulativeMasks {
            a_x: threshold(&self.a_x),
            a_h: threshold(&self.a_h),
            a_s: self.a_s.clone(),
        }
    }

    fn vocab(&self, w: usize) -> f64 {
        if self.a_s.get(w).copied().unwrap_or(false) {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub s_max: f64,
    pub batches: usize,
}

/// Scale for batch `b` (1-based) of an epoch with `sched.batches` batches:
/// linear from `1/s_max` at the first batch to `s_max` at the last.
pub fn anneal_s(b: usize, sched: &AnnealSchedule) -> Result<f64> {
    if sched.batches == 0 || b == 0 || b > sched.batches {
        return Err(Error::Domain(format!(
            "batch index {b} outside 1..={}",
            sched.batches
        )));
    }
    if sched.batches == 1 {
        return Ok(sched.s_max);
    }
    let inv = 1.0 / sched.s_max;
    if b == sched.batches {
        return Ok(sched.s_max);
    }
    Ok(inv + (sched.s_max - inv) * (b - 1) as f64 / (sched.batches - 1) as f64)
}

fn clamped_preact(s: f64, a: f64) -> f64 {
    (s * a).clamp(-PREACT_CLAMP, PREACT_CLAMP)
}

/// Attention masks of task `t` at scale `s`.
pub fn compute_masks(emb: &TaskEmbeddings, t: usize, s: f64, task_vocab: &[bool]) -> Result<MaskSet> {
    if t >= emb.tasks() {
        return Err(Error::Task(format!("task {t} out of range (K = {})", emb.tasks())));
    }
    if !(s > 0.0) {
        return Err(Error::Domain(format!("mask scale must be positive, got {s}")));
    }
    let col = |m: &Matrix| Vector(m.column(t).iter().map(|&a| sigmoid(clamped_preact(s, a))).collect());
    Ok(MaskSet {
        task: t,
        scale: s,
        a_x: col(&emb.a_x),
        a_h: col(&emb.a_h),
        a_s: task_vocab.to_vec(),
    })
}

/// `max` for the real-valued masks, `or` for the vocabulary mask.
pub fn update_cumulative(prev: &CumulativeMasks, cur: &MaskSet) -> Result<CumulativeMasks> {
    if prev.a_x.len() != cur.a_x.len() || prev.a_h.len() != cur.a_h.len() {
        return Err(Error::shape(
            "update_cumulative",
            format!("{}/{}", prev.a_x.len(), prev.a_h.len()),
            format!("{}/{}", cur.a_x.len(), cur.a_h.len()),
        ));
    }
    let max = |a: &Vector, b: &Vector| Vector(a.iter().zip(b.iter()).map(|(x, y)| x.max(*y)).collect());
    let n = prev.a_s.len().max(cur.a_s.len());
    let a_s = (0..n)
        .map(|i| prev.a_s.get(i).copied().unwrap_or(false) || cur.a_s.get(i).copied().unwrap_or(false))
        .collect();
    Ok(CumulativeMasks {
        a_x: max(&prev.a_x, &cur.a_x),
        a_h: max(&prev.a_h, &cur.a_h),
        a_s,
    })
}

/// Per-weight update multipliers. The four input-gate matrices share
/// `input`, the four recurrent ones share `recurrent`, and the four bias
/// vectors share `bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct BackwardMasks {
    pub recurrent: Matrix,
    pub input: Matrix,
    pub bias: Vector,
    pub s: Matrix,
    pub c: Matrix,
    pub v: Matrix,
}

impl BackwardMasks {
    pub fn for_kind(&self, kind: ParamKind) -> &[f64] {
        match kind {
            ParamKind::V => self.v.as_slice(),
            ParamKind::S => self.s.as_slice(),
            ParamKind::C => self.c.as_slice(),
            k if k.is_input_gate_matrix() => self.input.as_slice(),
            k if k.is_recurrent_gate_matrix() => self.recurrent.as_slice(),
            _ => &self.bias.0,
        }
    }
}

/// `1 − min` over whichever of the two incident attentions are selected;
/// `1` when neither is.
fn one_minus_min(a: Option<f64>, b: Option<f64>) -> f64 {
    match (a, b) {
        (Some(a), Some(b)) => 1.0 - a.min(b),
        (Some(a), None) | (None, Some(a)) => 1.0 - a,
        (None, None) => 1.0,
    }
}

/// Backward masks for every trainable tensor of a model with `dims`, all
/// three masks taking part.
pub fn backward_masks(cum: &CumulativeMasks, dims: ModelDims) -> BackwardMasks {
    backward_masks_with(cum, dims, MaskSelection::ALL)
}

pub fn backward_masks_with(cum: &CumulativeMasks, dims: ModelDims, sel: MaskSelection) -> BackwardMasks {
    let (de, dh, nv) = (dims.d_emb, dims.d_hidden, dims.vocab_size);
    let ax = |i: usize| sel.embed.then(|| cum.a_x[i]);
    let ah = |i: usize| sel.hidden.then(|| cum.a_h[i]);
    let as_ = |w: usize| sel.vocab.then(|| cum.vocab(w));

    let build = |rows: usize, cols: usize, f: &dyn Fn(usize, usize) -> f64| {
        let data = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        Matrix::new(rows, cols, data).expect("mask entries are finite")
    };
    BackwardMasks {
        recurrent: build(dh, dh, &|i, j| one_minus_min(ah(i), ah(j))),
        input: build(dh, de, &|i, j| one_minus_min(ah(i), ax(j))),
        bias: Vector((0..dh).map(|i| one_minus_min(ah(i), None)).collect()),
        s: build(de, nv, &|i, j| one_minus_min(ax(i), as_(j))),
        c: build(nv, dh, &|i, j| one_minus_min(as_(i), ah(j))),
        v: build(de, dims.d_feat, &|i, _| one_minus_min(ax(i), None)),
    }
}

/// One masked SGD step `W − lr·(B ⊙ ∂L/∂W)`. Entries with `B = 0` are
/// returned untouched.
pub fn apply_masked_update(w: &Matrix, grad: &Matrix, mask: &Matrix, lr: f64) -> Result<Matrix> {
    if w.shape() != grad.shape() || w.shape() != mask.shape() {
        return Err(Error::shape(
            "apply_masked_update",
            format!("{:?}", w.shape()),
            format!("{:?} / {:?}", grad.shape(), mask.shape()),
        ));
    }
    let mut out = w.clone();
    masked_sgd_in_place(out.as_mut_slice(), grad.as_slice(), mask.as_slice(), lr);
    Ok(out)
}

pub(crate) fn masked_sgd_in_place(w: &mut [f64], grad: &[f64], mask: &[f64], lr: f64) {
    for ((w, g), b) in w.iter_mut().zip(grad).zip(mask) {
        if *b != 0.0 {
            *w -= lr * (b * g);
        }
    }
}

/// Sparsity penalty of the current masks relative to the units already
/// claimed, with its gradient with respect to the current masks.
pub fn sparsity_loss_grad(cur: &MaskSet, cum: &CumulativeMasks, sel: MaskSelection) -> (f64, AttentionGrads) {
    let term = |a: &Vector, c: &Vector| -> (f64, Vec<f64>) {
        let free: f64 = c.iter().map(|c| 1.0 - c).sum();
        if free <= 0.0 {
            return (0.0, vec![0.0; a.len()]);
        }
        let used: f64 = a.iter().zip(c.iter()).map(|(a, c)| a * (1.0 - c)).sum();
        (used / free, c.iter().map(|c| (1.0 - c) / free).collect())
    };
    let (lx, gx) = if sel.embed { term(&cur.a_x, &cum.a_x) } else { (0.0, vec![0.0; cur.a_x.len()]) };
    let (lh, gh) = if sel.hidden { term(&cur.a_h, &cum.a_h) } else { (0.0, vec![0.0; cur.a_h.len()]) };
    (lx + lh, AttentionGrads { embed: gx, hidden: gh })
}

pub fn sparsity_loss(cur: &MaskSet, cum: &CumulativeMasks) -> f64 {
    sparsity_loss_grad(cur, cum, MaskSelection::ALL).0
}

/// Multiplier applied to the gradient of one task-embedding entry `a`:
/// `s_max (cosh(s a) + 1) / (s (cosh(a) + 1))`, with `s a` clamped like the
/// forward pass.
pub fn compensation_factor(a: f64, s: f64, s_max: f64) -> f64 {
    s_max * (clamped_preact(s, a).cosh() + 1.0) / (s * (a.cosh() + 1.0))
}

/// Applies [`compensation_factor`] to the gradients of task `t`'s columns.
pub fn compensate_embedding_gradients(
    grad: &mut TaskEmbeddings,
    emb: &TaskEmbeddings,
    t: usize,
    s: f64,
    sched: &AnnealSchedule,
) {
    for (g, e) in [(&mut grad.a_x, &emb.a_x), (&mut grad.a_h, &emb.a_h)] {
        for i in 0..e.rows() {
            let f = compensation_factor(e.get(i, t), s, sched.s_max);
            g.set(i, t, g.get(i, t) * f);
        }
    }
}

/// Chains mask gradients back to column `t` of the task embeddings through
/// `a = σ(s·A)`.
pub fn embedding_gradients(
    emb: &TaskEmbeddings,
    masks: &MaskSet,
    dmask: &AttentionGrads,
) -> TaskEmbeddings {
    let t = masks.task;
    let s = masks.scale;
    let mut out = TaskEmbeddings {
        a_x: Matrix::zeros(emb.a_x.rows(), emb.a_x.cols()),
        a_h: Matrix::zeros(emb.a_h.rows(), emb.a_h.cols()),
    };
    for (i, (&a, &d)) in masks.a_x.iter().zip(&dmask.embed).enumerate() {
        out.a_x.set(i, t, d * s * a * (1.0 - a));
    }
    for (i, (&a, &d)) in masks.a_h.iter().zip(&dmask.hidden).enumerate() {
        out.a_h.set(i, t, d * s * a * (1.0 - a));
    }
    out
}

/// Unit usage of one task's mask, for reporting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskUsage {
    pub task: usize,
    pub embed_used: usize,
    pub embed_total: usize,
    pub hidden_used: usize,
    pub hidden_total: usize,
    pub cumulative_embed_used: usize,
    pub cumulative_hidden_used: usize,
    pub vocab_words: usize,
}

impl MaskUsage {
    pub fn measure(masks: &MaskSet, cum: &CumulativeMasks) -> Self {
        let used = |v: &Vector| v.iter().filter(|&&a| a >= 0.5).count();
        Self {
            task: masks.task,
            embed_used: used(&masks.a_x),
            embed_total: masks.a_x.len(),
            hidden_used: used(&masks.a_h),
            hidden_total: masks.a_h.len(),
            cumulative_embed_used: used(&cum.a_x),
            cumulative_hidden_used: used(&cum.a_h),
            vocab_words: masks.a_s.iter().filter(|&&b| b).count(),
        }
    }
}

/// Updates `params` with per-entry masks, leaving masked-out entries
/// bit-identical. Convenience wrapper around [`apply_masked_update`] for the
/// whole model.
pub fn masked_sgd_step(params: &mut ModelParams, grads: &ModelParams, masks: &BackwardMasks, lr: f64) {
    for kind in ParamKind::ALL {
        let g = grads.tensor(kind).to_vec();
        masked_sgd_in_place(params.tensor_mut(kind), &g, masks.for_kind(kind), lr);
    }
}
