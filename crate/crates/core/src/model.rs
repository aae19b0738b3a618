//! LSTM caption decoder.
//!
//! Frozen image features are projected into the word-embedding space by `V`
//! and consumed at step 0; every later step consumes the embedding (a column
//! of `S`) of the previous caption word. A linear classifier `C` maps the
//! hidden state to word logits, normalized over the currently active
//! vocabulary only.
//!
//! Step `k` of a caption `w_0 … w_{L-1}` predicts `w_k`; step 0 reads the
//! image, step `k ≥ 1` reads `w_{k-1}`. Gradients are computed by explicit
//! backpropagation through time.
//!
//! Optional per-unit attention vectors can modulate the LSTM input
//! (`x̄ = x ⊙ a_x`) and the hidden state (`h̄ = h ⊙ a_h`); the masked hidden
//! state feeds both the classifier and the recurrence. The cell state is not
//! modulated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, log_softmax_at, seeded_uniform, sigmoid, softmax_dense, Matrix, Rng, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d_feat: usize,
    pub d_emb: usize,
    pub d_hidden: usize,
    pub vocab_size: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.d_feat == 0 || self.d_emb == 0 || self.d_hidden == 0 || self.vocab_size == 0 {
            return Err(Error::Domain(format!("all model dimensions must be >= 1: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_emb: usize,
    pub d_hidden: usize,
    /// `h = o ⊙ tanh(c)` instead of the default `h = o ⊙ c`.
    pub standard_cell_output: bool,
    /// Weights are drawn from `[-init_range, init_range)`.
    pub init_range: f64,
    pub forget_bias: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_emb: 32,
            d_hidden: 64,
            standard_cell_output: false,
            init_range: 0.1,
            forget_bias: 1.0,
        }
    }
}

/// Identifies one trainable tensor of [`ModelParams`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamKind {
    V,
    S,
    C,
    Wix,
    Wox,
    Wfx,
    Wgx,
    Wih,
    Woh,
    Wfh,
    Wgh,
    Bi,
    Bo,
    Bf,
    Bg,
}

impl ParamKind {
    pub const ALL: [ParamKind; 15] = [
        ParamKind::V,
        ParamKind::S,
        ParamKind::C,
        ParamKind::Wix,
        ParamKind::Wox,
        ParamKind::Wfx,
        ParamKind::Wgx,
        ParamKind::Wih,
        ParamKind::Woh,
        ParamKind::Wfh,
        ParamKind::Wgh,
        ParamKind::Bi,
        ParamKind::Bo,
        ParamKind::Bf,
        ParamKind::Bg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamKind::V => "V",
            ParamKind::S => "S",
            ParamKind::C => "C",
            ParamKind::Wix => "W_ix",
            ParamKind::Wox => "W_ox",
            ParamKind::Wfx => "W_fx",
            ParamKind::Wgx => "W_gx",
            ParamKind::Wih => "W_ih",
            ParamKind::Woh => "W_oh",
            ParamKind::Wfh => "W_fh",
            ParamKind::Wgh => "W_gh",
            ParamKind::Bi => "b_i",
            ParamKind::Bo => "b_o",
            ParamKind::Bf => "b_f",
            ParamKind::Bg => "b_g",
        }
    }

    pub fn is_input_gate_matrix(self) -> bool {
        matches!(self, ParamKind::Wix | ParamKind::Wox | ParamKind::Wfx | ParamKind::Wgx)
    }

    pub fn is_recurrent_gate_matrix(self) -> bool {
        matches!(self, ParamKind::Wih | ParamKind::Woh | ParamKind::Wfh | ParamKind::Wgh)
    }

    pub fn is_bias(self) -> bool {
        matches!(self, ParamKind::Bi | ParamKind::Bo | ParamKind::Bf | ParamKind::Bg)
    }
}

/// All trainable tensors of the decoder. `S` holds one column per word and
/// `C` one row per word; both only ever grow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub standard_cell_output: bool,
    pub v: Matrix,
    pub s: Matrix,
    pub c: Matrix,
    pub w_ix: Matrix,
    pub w_ox: Matrix,
    pub w_fx: Matrix,
    pub w_gx: Matrix,
    pub w_ih: Matrix,
    pub w_oh: Matrix,
    pub w_fh: Matrix,
    pub w_gh: Matrix,
    pub b_i: Vector,
    pub b_o: Vector,
    pub b_f: Vector,
    pub b_g: Vector,
}

/// Gradients share the layout of the parameters they belong to.
pub type Gradients = ModelParams;

impl ModelParams {
    pub fn init(dims: ModelDims, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        dims.validate()?;
        let r = cfg.init_range;
        let mut u = |rows, cols| seeded_uniform(rng, -r, r, rows, cols);
        let (e, h) = (dims.d_emb, dims.d_hidden);
        Ok(Self {
            dims,
            standard_cell_output: cfg.standard_cell_output,
            v: u(e, dims.d_feat)?,
            s: u(e, dims.vocab_size)?,
            c: u(dims.vocab_size, h)?,
            w_ix: u(h, e)?,
            w_ox: u(h, e)?,
            w_fx: u(h, e)?,
            w_gx: u(h, e)?,
            w_ih: u(h, h)?,
            w_oh: u(h, h)?,
            w_fh: u(h, h)?,
            w_gh: u(h, h)?,
            b_i: Vector::zeros(h),
            b_o: Vector::zeros(h),
            b_f: Vector::filled(h, cfg.forget_bias),
            b_g: Vector::zeros(h),
        })
    }

    /// All-zero tensors with the same shapes.
    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        let zv = |v: &Vector| Vector::zeros(v.len());
        Self {
            dims: self.dims,
            standard_cell_output: self.standard_cell_output,
            v: z(&self.v),
            s: z(&self.s),
            c: z(&self.c),
            w_ix: z(&self.w_ix),
            w_ox: z(&self.w_ox),
            w_fx: z(&self.w_fx),
            w_gx: z(&self.w_gx),
            w_ih: z(&self.w_ih),
            w_oh: z(&self.w_oh),
            w_fh: z(&self.w_fh),
            w_gh: z(&self.w_gh),
            b_i: zv(&self.b_i),
            b_o: zv(&self.b_o),
            b_f: zv(&self.b_f),
            b_g: zv(&self.b_g),
        }
    }

    /// `(rows, cols)` of a tensor; biases are `d_hidden × 1`.
    pub fn shape_of(&self, kind: ParamKind) -> (usize, usize) {
        match kind {
            ParamKind::Bi | ParamKind::Bo | ParamKind::Bf | ParamKind::Bg => (self.dims.d_hidden, 1),
            _ => self.matrix(kind).expect("matrix kind").shape(),
        }
    }

    fn matrix(&self, kind: ParamKind) -> Option<&Matrix> {
        Some(match kind {
            ParamKind::V => &self.v,
            ParamKind::S => &self.s,
            ParamKind::C => &self.c,
            ParamKind::Wix => &self.w_ix,
            ParamKind::Wox => &self.w_ox,
            ParamKind::Wfx => &self.w_fx,
            ParamKind::Wgx => &self.w_gx,
            ParamKind::Wih => &self.w_ih,
            ParamKind::Woh => &self.w_oh,
            ParamKind::Wfh => &self.w_fh,
            ParamKind::Wgh => &self.w_gh,
            _ => return None,
        })
    }

    pub fn tensor(&self, kind: ParamKind) -> &[f64] {
        match kind {
            ParamKind::Bi => &self.b_i.0,
            ParamKind::Bo => &self.b_o.0,
            ParamKind::Bf => &self.b_f.0,
            ParamKind::Bg => &self.b_g.0,
            _ => self.matrix(kind).expect("matrix kind").as_slice(),
        }
    }

    pub fn tensor_mut(&mut self, kind: ParamKind) -> &mut [f64] {
        match kind {
            ParamKind::V => self.v.as_mut_slice(),
            ParamKind::S => self.s.as_mut_slice(),
            ParamKind::C => self.c.as_mut_slice(),
            ParamKind::Wix => self.w_ix.as_mut_slice(),
            ParamKind::Wox => self.w_ox.as_mut_slice(),
            ParamKind::Wfx => self.w_fx.as_mut_slice(),
            ParamKind::Wgx => self.w_gx.as_mut_slice(),
            ParamKind::Wih => self.w_ih.as_mut_slice(),
            ParamKind::Woh => self.w_oh.as_mut_slice(),
            ParamKind::Wfh => self.w_fh.as_mut_slice(),
            ParamKind::Wgh => self.w_gh.as_mut_slice(),
            ParamKind::Bi => &mut self.b_i.0,
            ParamKind::Bo => &mut self.b_o.0,
            ParamKind::Bf => &mut self.b_f.0,
            ParamKind::Bg => &mut self.b_g.0,
        }
    }

    /// `self += alpha · other`, tensor by tensor. Shapes must agree.
    pub fn add_scaled(&mut self, alpha: f64, other: &Self) {
        for kind in ParamKind::ALL {
            axpy(alpha, other.tensor(kind), self.tensor_mut(kind));
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for kind in ParamKind::ALL {
            self.tensor_mut(kind).iter_mut().for_each(|v| *v *= alpha);
        }
    }

    pub fn all_finite(&self) -> bool {
        ParamKind::ALL
            .iter()
            .all(|&k| self.tensor(k).iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        ParamKind::ALL
            .iter()
            .flat_map(|&k| self.tensor(k).iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Appends `extra` words: one new column of `S` and one new row of `C`
    /// each, drawn from `[-init_range, init_range)`. Existing entries are not
    /// touched.
    pub fn expand_vocab(&mut self, extra: usize, init_range: f64, rng: &mut Rng) {
        if extra == 0 {
            return;
        }
        self.s.append_columns(extra, || rng.uniform(-init_range, init_range));
        self.c.append_rows(extra, || rng.uniform(-init_range, init_range));
        self.dims.vocab_size += extra;
    }
}

/// Set of word ids the output distribution is normalized over.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Support {
    mask: Vec<bool>,
    active: Vec<usize>,
}

impl Support {
    pub fn from_mask(mask: Vec<bool>) -> Self {
        let active = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &on)| on.then_some(i))
            .collect();
        Self { mask, active }
    }

    pub fn full(n: usize) -> Self {
        Self::from_mask(vec![true; n])
    }

    pub fn from_ids(len: usize, ids: impl IntoIterator<Item = usize>) -> Self {
        let mut mask = vec![false; len];
        for id in ids {
            mask[id] = true;
        }
        Self::from_mask(mask)
    }

    pub fn contains(&self, id: usize) -> bool {
        self.mask.get(id).copied().unwrap_or(false)
    }

    /// Active ids in ascending order.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    /// Position of `id` within [`Support::active`].
    pub fn position(&self, id: usize) -> Option<usize> {
        self.active.binary_search(&id).ok()
    }

    pub fn union(&self, other: &Support) -> Support {
        let n = self.len().max(other.len());
        Support::from_mask((0..n).map(|i| self.contains(i) || other.contains(i)).collect())
    }
}

/// Per-unit attention applied to the LSTM input and hidden state.
#[derive(Clone, Copy, Debug, Default)]
pub struct Modulation<'a> {
    pub embed: Option<&'a [f64]>,
    pub hidden: Option<&'a [f64]>,
}

impl<'a> Modulation<'a> {
    pub const NONE: Modulation<'static> = Modulation {
        embed: None,
        hidden: None,
    };
}

/// One training example: frozen image features and a caption (including
/// its sentinel ids).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vector,
    pub caption: Vec<usize>,
}

/// Gate activations of one LSTM step.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmStep {
    pub i: Vec<f64>,
    pub o: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

/// One LSTM step without attention: gates from `x` and `h_prev`, then
/// `c = f⊙c_prev + i⊙g` and `h = o⊙c` (or `o⊙tanh(c)`).
pub fn lstm_step(x: &[f64], h_prev: &[f64], c_prev: &[f64], params: &ModelParams) -> Result<LstmStep> {
    let d = params.dims;
    if x.len() != d.d_emb {
        return Err(Error::shape("lstm_step input", d.d_emb, x.len()));
    }
    if h_prev.len() != d.d_hidden || c_prev.len() != d.d_hidden {
        return Err(Error::shape(
            "lstm_step state",
            d.d_hidden,
            format!("h {} / c {}", h_prev.len(), c_prev.len()),
        ));
    }
    Ok(cell_forward(params, x, h_prev, c_prev))
}

#[inline]
fn cell_forward(p: &ModelParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmStep {
    let gate = |w_x: &Matrix, w_h: &Matrix, b: &Vector| {
        let mut z = b.0.clone();
        w_x.matvec_acc(x, &mut z);
        w_h.matvec_acc(h_prev, &mut z);
        z
    };
    let mut i = gate(&p.w_ix, &p.w_ih, &p.b_i);
    let mut o = gate(&p.w_ox, &p.w_oh, &p.b_o);
    let mut f = gate(&p.w_fx, &p.w_fh, &p.b_f);
    let mut g = gate(&p.w_gx, &p.w_gh, &p.b_g);
    i.iter_mut().for_each(|v| *v = sigmoid(*v));
    o.iter_mut().for_each(|v| *v = sigmoid(*v));
    f.iter_mut().for_each(|v| *v = sigmoid(*v));
    g.iter_mut().for_each(|v| *v = v.tanh());
    let c: Vec<f64> = (0..c_prev.len())
        .map(|u| f[u] * c_prev[u] + i[u] * g[u])
        .collect();
    let h = if p.standard_cell_output {
        o.iter().zip(&c).map(|(o, c)| o * c.tanh()).collect()
    } else {
        o.iter().zip(&c).map(|(o, c)| o * c).collect()
    };
    LstmStep { i, o, f, g, c, h }
}

/// What a step reads as its input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepInput {
    Image,
    Word(usize),
}

#[derive(Clone, Debug)]
pub(crate) struct StepCache {
    /// Input before attention.
    pub x: Vec<f64>,
    pub xbar: Vec<f64>,
    pub cell: LstmStep,
    pub hbar: Vec<f64>,
}

/// Everything a backward pass needs, cached by the forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub(crate) features: Vec<f64>,
    pub(crate) inputs: Vec<StepInput>,
    pub(crate) steps: Vec<StepCache>,
    pub(crate) embed_mask: Option<Vec<f64>>,
    pub(crate) hidden_mask: Option<Vec<f64>>,
    support: Support,
    /// Logits per step, in the order of `support.active()`.
    logits: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    /// Logits of step `k` over `support().active()`.
    pub fn logits(&self, k: usize) -> &[f64] {
        &self.logits[k]
    }

    /// Full-vocabulary probability vector of step `k` (zero off-support).
    pub fn probabilities(&self, k: usize) -> Vector {
        let p = softmax_dense(&self.logits[k]);
        let mut out = vec![0.0; self.support.len()];
        for (&id, v) in self.support.active().iter().zip(p) {
            out[id] = v;
        }
        Vector(out)
    }

    /// Masked hidden state `h̄` after step `k`.
    pub fn hidden(&self, k: usize) -> &[f64] {
        &self.steps[k].hbar
    }

    /// Raw (pre-attention) LSTM inputs, one per step.
    pub fn raw_inputs(&self) -> impl Iterator<Item = &[f64]> {
        self.steps.iter().map(|s| s.x.as_slice())
    }
}

fn check_mask(name: &'static str, mask: Option<&[f64]>, len: usize) -> Result<()> {
    match mask {
        Some(m) if m.len() != len => Err(Error::shape(name, len, m.len())),
        _ => Ok(()),
    }
}

/// Runs the LSTM over explicit raw input vectors. Used directly when a
/// frozen teacher consumes a student's embeddings.
pub fn run_lstm(params: &ModelParams, raw_inputs: Vec<Vec<f64>>, modulation: Modulation<'_>) -> Result<Vec<Vec<f64>>> {
    let steps = run_steps(params, raw_inputs, modulation)?;
    Ok(steps.into_iter().map(|s| s.hbar).collect())
}

fn run_steps(params: &ModelParams, raw_inputs: Vec<Vec<f64>>, modulation: Modulation<'_>) -> Result<Vec<StepCache>> {
    let d = params.dims;
    check_mask("embedding attention", modulation.embed, d.d_emb)?;
    check_mask("hidden attention", modulation.hidden, d.d_hidden)?;
    let mut hbar_prev = vec![0.0; d.d_hidden];
    let mut c_prev = vec![0.0; d.d_hidden];
    let mut steps = Vec::with_capacity(raw_inputs.len());
    for x in raw_inputs {
        if x.len() != d.d_emb {
            return Err(Error::shape("LSTM input", d.d_emb, x.len()));
        }
        let xbar = match modulation.embed {
            Some(a) => x.iter().zip(a).map(|(v, a)| v * a).collect(),
            None => x.clone(),
        };
        let cell = cell_forward(params, &xbar, &hbar_prev, &c_prev);
        let hbar = match modulation.hidden {
            Some(a) => cell.h.iter().zip(a).map(|(v, a)| v * a).collect(),
            None => cell.h.clone(),
        };
        hbar_prev.clone_from(&hbar);
        c_prev.clone_from(&cell.c);
        steps.push(StepCache { x, xbar, cell, hbar });
    }
    Ok(steps)
}

fn image_input(params: &ModelParams, features: &[f64]) -> Result<Vec<f64>> {
    Ok(params.v.matvec(features)?.0)
}

fn word_input(params: &ModelParams, word: usize) -> Vec<f64> {
    params.s.column(word)
}

/// Logits `C_w · h̄` for every active word, in support order.
pub(crate) fn head_logits(c: &Matrix, hbar: &[f64], support: &Support) -> Vec<f64> {
    support.active().iter().map(|&w| dot(c.row(w), hbar)).collect()
}

/// Backward through the linear classifier restricted to `support`:
/// accumulates `dC` and `dh̄`.
pub(crate) fn head_backward(
    c: &Matrix,
    grad_c: &mut Matrix,
    hbar: &[f64],
    support: &Support,
    dlogits: &[f64],
    dhbar: &mut [f64],
) {
    for (&w, &dz) in support.active().iter().zip(dlogits) {
        if dz != 0.0 {
            axpy(dz, hbar, grad_c.row_mut(w));
            axpy(dz, c.row(w), dhbar);
        }
    }
}

/// Teacher-forced forward pass: step 0 reads `V·features`, step `k ≥ 1`
/// reads the embedding of `caption[k-1]`.
pub fn forward_teacher_forced(
    ex: &Example,
    params: &ModelParams,
    active_vocab: &Support,
    modulation: Modulation<'_>,
) -> Result<ForwardTrace> {
    let d = params.dims;
    if ex.caption.is_empty() {
        return Err(Error::Domain("empty caption".into()));
    }
    if ex.features.len() != d.d_feat {
        return Err(Error::shape("image features", d.d_feat, ex.features.len()));
    }
    if active_vocab.len() != d.vocab_size {
        return Err(Error::shape("active vocabulary", d.vocab_size, active_vocab.len()));
    }
    if let Some(&w) = ex.caption.iter().find(|&&w| !active_vocab.contains(w)) {
        return Err(Error::Vocabulary(format!(
            "caption word id {w} is outside the active vocabulary"
        )));
    }
    let mut inputs = Vec::with_capacity(ex.caption.len());
    let mut raw = Vec::with_capacity(ex.caption.len());
    inputs.push(StepInput::Image);
    raw.push(image_input(params, &ex.features)?);
    for &w in &ex.caption[..ex.caption.len() - 1] {
        inputs.push(StepInput::Word(w));
        raw.push(word_input(params, w));
    }
    let steps = run_steps(params, raw, modulation)?;
    let logits = steps
        .iter()
        .map(|s| head_logits(&params.c, &s.hbar, active_vocab))
        .collect();
    Ok(ForwardTrace {
        features: ex.features.0.clone(),
        inputs,
        steps,
        embed_mask: modulation.embed.map(<[f64]>::to_vec),
        hidden_mask: modulation.hidden.map(<[f64]>::to_vec),
        support: active_vocab.clone(),
        logits,
    })
}

/// Summed negative log-likelihood of `targets` under the trace.
pub fn ce_loss(trace: &ForwardTrace, targets: &[usize]) -> Result<f64> {
    check_targets(trace, targets)?;
    let mut loss = 0.0;
    for (k, &t) in targets.iter().enumerate() {
        let pos = trace.support.position(t).ok_or_else(|| target_error(t))?;
        loss -= log_softmax_at(&trace.logits[k], pos);
    }
    Ok(loss)
}

fn check_targets(trace: &ForwardTrace, targets: &[usize]) -> Result<()> {
    if targets.len() != trace.len() {
        return Err(Error::shape("targets", trace.len(), targets.len()));
    }
    Ok(())
}

fn target_error(t: usize) -> Error {
    Error::Vocabulary(format!("target word id {t} has zero probability (outside the support)"))
}

/// `∂(scale · CE)/∂logits` for every step, in support order.
pub fn ce_logit_grads(trace: &ForwardTrace, targets: &[usize], scale: f64) -> Result<Vec<Vec<f64>>> {
    check_targets(trace, targets)?;
    targets
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let pos = trace.support.position(t).ok_or_else(|| target_error(t))?;
            let mut g = softmax_dense(&trace.logits[k]);
            g[pos] -= 1.0;
            g.iter_mut().for_each(|v| *v *= scale);
            Ok(g)
        })
        .collect()
}

/// Gradients of the loss with respect to the attention vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionGrads {
    pub embed: Vec<f64>,
    pub hidden: Vec<f64>,
}

impl AttentionGrads {
    pub fn zeros(d_emb: usize, d_hidden: usize) -> Self {
        Self {
            embed: vec![0.0; d_emb],
            hidden: vec![0.0; d_hidden],
        }
    }
}

/// Exact gradient of the caption cross-entropy with respect to every
/// parameter.
pub fn backward(params: &ModelParams, trace: &ForwardTrace, targets: &[usize]) -> Result<Gradients> {
    let mut grads = params.zeros_like();
    let dlogits = ce_logit_grads(trace, targets, 1.0)?;
    backprop(params, trace, &dlogits, None, &mut grads, None);
    Ok(grads)
}

/// Backpropagation through time.
///
/// `dlogits[k]` is the gradient at the trace's own classifier head (support
/// order); `extra_dhbar[k]`, when given, is an additional gradient arriving
/// at `h̄_k` from some other head. Gradients are accumulated into `grads`
/// and, when requested, into `attn`.
pub fn backprop(
    params: &ModelParams,
    trace: &ForwardTrace,
    dlogits: &[Vec<f64>],
    extra_dhbar: Option<&[Vec<f64>]>,
    grads: &mut Gradients,
    mut attn: Option<&mut AttentionGrads>,
) {
    let dh = params.dims.d_hidden;
    let de = params.dims.d_emb;
    let mut dhbar_next = vec![0.0; dh];
    let mut dc_next = vec![0.0; dh];
    let zeros = vec![0.0; dh];
    let mut dx = vec![0.0; de];
    for k in (0..trace.len()).rev() {
        let step = &trace.steps[k];
        let cell = &step.cell;
        let mut dhbar = dhbar_next.clone();
        head_backward(&params.c, &mut grads.c, &step.hbar, &trace.support, &dlogits[k], &mut dhbar);
        if let Some(extra) = extra_dhbar {
            axpy(1.0, &extra[k], &mut dhbar);
        }

        // h̄ = h ⊙ a_h
        let dhv: Vec<f64> = match &trace.hidden_mask {
            Some(a) => {
                if let Some(attn) = attn.as_deref_mut() {
                    for u in 0..dh {
                        attn.hidden[u] += dhbar[u] * cell.h[u];
                    }
                }
                dhbar.iter().zip(a).map(|(d, a)| d * a).collect()
            }
            None => dhbar,
        };

        let (hbar_prev, c_prev) = if k == 0 {
            (&zeros, &zeros)
        } else {
            (&trace.steps[k - 1].hbar, &trace.steps[k - 1].cell.c)
        };

        let mut dzi = vec![0.0; dh];
        let mut dzo = vec![0.0; dh];
        let mut dzf = vec![0.0; dh];
        let mut dzg = vec![0.0; dh];
        for u in 0..dh {
            let (phi, dphi) = if params.standard_cell_output {
                let t = cell.c[u].tanh();
                (t, 1.0 - t * t)
            } else {
                (cell.c[u], 1.0)
            };
            let d_o = dhv[u] * phi;
            let dc = dhv[u] * cell.o[u] * dphi + dc_next[u];
            let d_i = dc * cell.g[u];
            let d_g = dc * cell.i[u];
            let d_f = dc * c_prev[u];
            dc_next[u] = dc * cell.f[u];
            dzi[u] = d_i * cell.i[u] * (1.0 - cell.i[u]);
            dzo[u] = d_o * cell.o[u] * (1.0 - cell.o[u]);
            dzf[u] = d_f * cell.f[u] * (1.0 - cell.f[u]);
            dzg[u] = d_g * (1.0 - cell.g[u] * cell.g[u]);
        }

        let mut dxbar = vec![0.0; de];
        let mut dh_prev = vec![0.0; dh];
        let gates: [(&Vec<f64>, ParamKind, ParamKind, ParamKind); 4] = [
            (&dzi, ParamKind::Wix, ParamKind::Wih, ParamKind::Bi),
            (&dzo, ParamKind::Wox, ParamKind::Woh, ParamKind::Bo),
            (&dzf, ParamKind::Wfx, ParamKind::Wfh, ParamKind::Bf),
            (&dzg, ParamKind::Wgx, ParamKind::Wgh, ParamKind::Bg),
        ];
        for (dz, kx, kh, kb) in gates {
            gate_matrix_mut(grads, kx).add_outer(dz, &step.xbar);
            if k > 0 {
                gate_matrix_mut(grads, kh).add_outer(dz, hbar_prev);
                gate_matrix(params, kh).matvec_t_acc(dz, &mut dh_prev);
            }
            axpy(1.0, dz, grads.tensor_mut(kb));
            gate_matrix(params, kx).matvec_t_acc(dz, &mut dxbar);
        }
        dhbar_next = dh_prev;

        // x̄ = x ⊙ a_x
        match &trace.embed_mask {
            Some(a) => {
                if let Some(attn) = attn.as_deref_mut() {
                    for u in 0..de {
                        attn.embed[u] += dxbar[u] * step.x[u];
                    }
                }
                for u in 0..de {
                    dx[u] = dxbar[u] * a[u];
                }
            }
            None => dx.copy_from_slice(&dxbar),
        }

        match trace.inputs[k] {
            StepInput::Image => grads.v.add_outer(&dx, &trace.features),
            StepInput::Word(w) => {
                let vocab = grads.s.cols();
                let s = grads.s.as_mut_slice();
                for (u, d) in dx.iter().enumerate() {
                    s[u * vocab + w] += d;
                }
            }
        }
    }
}

fn gate_matrix(p: &ModelParams, kind: ParamKind) -> &Matrix {
    p.matrix(kind).expect("gate matrix")
}

fn gate_matrix_mut(p: &mut ModelParams, kind: ParamKind) -> &mut Matrix {
    match kind {
        ParamKind::Wix => &mut p.w_ix,
        ParamKind::Wox => &mut p.w_ox,
        ParamKind::Wfx => &mut p.w_fx,
        ParamKind::Wgx => &mut p.w_gx,
        ParamKind::Wih => &mut p.w_ih,
        ParamKind::Woh => &mut p.w_oh,
        ParamKind::Wfh => &mut p.w_fh,
        ParamKind::Wgh => &mut p.w_gh,
        _ => unreachable!("not a gate matrix: {kind:?}"),
    }
}

/// Index of the largest logit; ties go to the lowest word id.
fn argmax_word(logits: &[f64], support: &Support) -> usize {
    let mut best = 0;
    for (pos, &z) in logits.iter().enumerate() {
        if z > logits[best] {
            best = pos;
        }
    }
    support.active()[best]
}

/// Greedy decoding: feed back the arg-max word until `end_id` is emitted or
/// `max_len` words have been produced. The returned sequence includes the
/// end sentinel when it was emitted.
pub fn greedy_decode(
    params: &ModelParams,
    features: &[f64],
    active_vocab: &Support,
    max_len: usize,
    end_id: usize,
    modulation: Modulation<'_>,
) -> Result<Vec<usize>> {
    let d = params.dims;
    if max_len == 0 {
        return Err(Error::Domain("max decode length must be >= 1".into()));
    }
    if active_vocab.is_empty() || active_vocab.len() != d.vocab_size {
        return Err(Error::shape("active vocabulary", d.vocab_size, active_vocab.len()));
    }
    if features.len() != d.d_feat {
        return Err(Error::shape("image features", d.d_feat, features.len()));
    }
    check_mask("embedding attention", modulation.embed, d.d_emb)?;
    check_mask("hidden attention", modulation.hidden, d.d_hidden)?;

    let mut h = vec![0.0; d.d_hidden];
    let mut c = vec![0.0; d.d_hidden];
    let mut x = image_input(params, features)?;
    let mut out = Vec::new();
    while out.len() < max_len {
        if let Some(a) = modulation.embed {
            x.iter_mut().zip(a).for_each(|(v, a)| *v *= a);
        }
        let cell = cell_forward(params, &x, &h, &c);
        h = cell.h;
        if let Some(a) = modulation.hidden {
            h.iter_mut().zip(a).for_each(|(v, a)| *v *= a);
        }
        c = cell.c;
        let logits = head_logits(&params.c, &h, active_vocab);
        let w = argmax_word(&logits, active_vocab);
        out.push(w);
        if w == end_id {
            break;
        }
        x = word_input(params, w);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(vocab: usize) -> ModelDims {
        ModelDims {
            d_feat: 3,
            d_emb: 4,
            d_hidden: 6,
            vocab_size: vocab,
        }
    }

    fn random_model(seed: u64, vocab: usize, standard: bool) -> ModelParams {
        let cfg = ModelConfig {
            standard_cell_output: standard,
            init_range: 0.5,
            ..ModelConfig::default()
        };
        let mut p = ModelParams::init(dims(vocab), &cfg, &mut Rng::new(seed)).unwrap();
        // non-trivial biases
        let mut rng = Rng::new(seed ^ 0xABCD);
        for kind in [ParamKind::Bi, ParamKind::Bo, ParamKind::Bf, ParamKind::Bg] {
            p.tensor_mut(kind).iter_mut().for_each(|v| *v += rng.uniform(-0.3, 0.3));
        }
        p
    }

    fn zero_model(h: usize) -> ModelParams {
        let d = ModelDims {
            d_feat: 2,
            d_emb: 2,
            d_hidden: h,
            vocab_size: 3,
        };
        let mut p = ModelParams::init(d, &ModelConfig::default(), &mut Rng::new(0)).unwrap();
        p.scale(0.0);
        p
    }

    #[test]
    fn zero_weights_step() {
        let p = zero_model(3);
        let s = lstm_step(&[0.4, -1.0], &[0.0; 3], &[0.0; 3], &p).unwrap();
        assert_eq!(s.i, vec![0.5; 3]);
        assert_eq!(s.o, vec![0.5; 3]);
        assert_eq!(s.f, vec![0.5; 3]);
        assert_eq!(s.g, vec![0.0; 3]);
        assert_eq!(s.c, vec![0.0; 3]);
        assert_eq!(s.h, vec![0.0; 3]);

        let s = lstm_step(&[0.0, 0.0], &[0.0; 3], &[1.0, -2.0, 4.0], &p).unwrap();
        assert_eq!(s.c, vec![0.5, -1.0, 2.0]);
        assert_eq!(s.h, vec![0.25, -0.5, 1.0]);
    }

    #[test]
    fn lstm_step_shape_errors() {
        let p = zero_model(3);
        assert!(lstm_step(&[0.0], &[0.0; 3], &[0.0; 3], &p).is_err());
        assert!(lstm_step(&[0.0; 2], &[0.0; 2], &[0.0; 3], &p).is_err());
    }

    /// Two chained steps on a 2-unit cell against scalar hand evaluation.
    #[test]
    fn two_steps_match_scalar_unrolling() {
        let d = ModelDims {
            d_feat: 1,
            d_emb: 1,
            d_hidden: 2,
            vocab_size: 1,
        };
        let mut p = ModelParams::init(d, &ModelConfig::default(), &mut Rng::new(0)).unwrap();
        let set = |m: &mut Matrix, vals: &[f64]| m.as_mut_slice().copy_from_slice(vals);
        set(&mut p.w_ix, &[0.5, -0.25]);
        set(&mut p.w_ox, &[1.0, 0.75]);
        set(&mut p.w_fx, &[-0.5, 0.2]);
        set(&mut p.w_gx, &[0.3, -0.8]);
        set(&mut p.w_ih, &[0.1, 0.2, -0.3, 0.4]);
        set(&mut p.w_oh, &[-0.2, 0.5, 0.6, -0.1]);
        set(&mut p.w_fh, &[0.7, -0.4, 0.2, 0.3]);
        set(&mut p.w_gh, &[0.25, 0.35, -0.45, 0.55]);
        p.b_i.0 = vec![0.1, -0.1];
        p.b_o.0 = vec![0.0, 0.2];
        p.b_f.0 = vec![1.0, 1.0];
        p.b_g.0 = vec![-0.05, 0.05];

        let s1 = lstm_step(&[0.9], &[0.0, 0.0], &[0.0, 0.0], &p).unwrap();
        let s2 = lstm_step(&[-0.6], &s1.h, &s1.c, &p).unwrap();

        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        // hand unrolling, unit by unit
        let (x1, x2) = (0.9, -0.6);
        let mut h = [0.0f64; 2];
        let mut c = [0.0f64; 2];
        for x in [x1, x2] {
            let hp = h;
            let cp = c;
            let wi = [[0.1, 0.2], [-0.3, 0.4]];
            let wo = [[-0.2, 0.5], [0.6, -0.1]];
            let wf = [[0.7, -0.4], [0.2, 0.3]];
            let wg = [[0.25, 0.35], [-0.45, 0.55]];
            let xi = [0.5, -0.25];
            let xo = [1.0, 0.75];
            let xf = [-0.5, 0.2];
            let xg = [0.3, -0.8];
            let bi = [0.1, -0.1];
            let bo = [0.0, 0.2];
            let bf = [1.0, 1.0];
            let bg = [-0.05, 0.05];
            for u in 0..2 {
                let i = sig(xi[u] * x + wi[u][0] * hp[0] + wi[u][1] * hp[1] + bi[u]);
                let o = sig(xo[u] * x + wo[u][0] * hp[0] + wo[u][1] * hp[1] + bo[u]);
                let f = sig(xf[u] * x + wf[u][0] * hp[0] + wf[u][1] * hp[1] + bf[u]);
                let g = (xg[u] * x + wg[u][0] * hp[0] + wg[u][1] * hp[1] + bg[u]).tanh();
                c[u] = f * cp[u] + i * g;
                h[u] = o * c[u];
            }
        }
        for u in 0..2 {
            assert!((s2.h[u] - h[u]).abs() < 1e-15, "{} vs {}", s2.h[u], h[u]);
            assert!((s2.c[u] - c[u]).abs() < 1e-15);
        }
    }

    fn example(p: &ModelParams, caption: Vec<usize>, seed: u64) -> Example {
        let mut rng = Rng::new(seed);
        Example {
            features: Vector((0..p.dims.d_feat).map(|_| rng.uniform(-1.0, 1.0)).collect()),
            caption,
        }
    }

    #[test]
    fn single_word_caption() {
        let p = random_model(1, 5, false);
        let ex = example(&p, vec![3], 2);
        let t = forward_teacher_forced(&ex, &p, &Support::full(5), Modulation::NONE).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.logits(0).len(), 5);
    }

    #[test]
    fn loss_is_deterministic_and_nonnegative() {
        let p = random_model(3, 7, false);
        let ex = example(&p, vec![0, 4, 2, 6, 1], 4);
        let sup = Support::full(7);
        let a = forward_teacher_forced(&ex, &p, &sup, Modulation::NONE).unwrap();
        let b = forward_teacher_forced(&ex, &p, &sup, Modulation::NONE).unwrap();
        let la = ce_loss(&a, &ex.caption).unwrap();
        assert_eq!(la.to_bits(), ce_loss(&b, &ex.caption).unwrap().to_bits());
        assert!(la >= 0.0);
    }

    #[test]
    fn uniform_distribution_loss() {
        let mut p = random_model(3, 6, false);
        p.c.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        let sup = Support::from_ids(6, [0, 2, 3, 5]);
        let ex = example(&p, vec![2, 3, 5], 1);
        let t = forward_teacher_forced(&ex, &p, &sup, Modulation::NONE).unwrap();
        let loss = ce_loss(&t, &ex.caption).unwrap();
        assert!((loss - 3.0 * 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_classifier_drives_loss_to_zero() {
        let d = ModelDims {
            d_feat: 2,
            d_emb: 2,
            d_hidden: 2,
            vocab_size: 3,
        };
        let mut p = ModelParams::init(d, &ModelConfig::default(), &mut Rng::new(0)).unwrap();
        p.scale(0.0);
        // constant hidden unit: o = σ(b_o) ≈ 1, c ≈ i·g ≈ 1
        p.b_i.0 = vec![40.0, 40.0];
        p.b_o.0 = vec![40.0, 40.0];
        p.b_f.0 = vec![-40.0, -40.0];
        p.b_g.0 = vec![40.0, 40.0];
        p.c.set(1, 0, 1000.0);
        let ex = Example {
            features: Vector(vec![0.0, 0.0]),
            caption: vec![1, 1, 1],
        };
        let t = forward_teacher_forced(&ex, &p, &Support::full(3), Modulation::NONE).unwrap();
        assert!(ce_loss(&t, &ex.caption).unwrap() < 1e-12);
    }

    #[test]
    fn caption_outside_support_is_rejected() {
        let p = random_model(3, 6, false);
        let ex = example(&p, vec![2, 4], 1);
        let err = forward_teacher_forced(&ex, &p, &Support::from_ids(6, [2, 3]), Modulation::NONE)
            .unwrap_err();
        assert!(err.to_string().contains("id 4"), "{err}");
    }

    #[test]
    fn inactive_columns_do_not_matter() {
        let p = random_model(11, 8, false);
        let sup = Support::from_ids(8, [0, 1, 3, 6]);
        let ex = example(&p, vec![0, 3, 6, 1], 9);
        let base = forward_teacher_forced(&ex, &p, &sup, Modulation::NONE).unwrap();
        // swap the inactive words 2 <-> 7 and 4 <-> 5 in S and C
        let mut q = p.clone();
        for (a, b) in [(2, 7), (4, 5)] {
            for r in 0..q.s.rows() {
                let (x, y) = (q.s.get(r, a), q.s.get(r, b));
                q.s.set(r, a, y);
                q.s.set(r, b, x);
            }
            let ra = q.c.row(a).to_vec();
            let rb = q.c.row(b).to_vec();
            q.c.row_mut(a).copy_from_slice(&rb);
            q.c.row_mut(b).copy_from_slice(&ra);
        }
        let perm = forward_teacher_forced(&ex, &q, &sup, Modulation::NONE).unwrap();
        for k in 0..base.len() {
            assert_eq!(base.probabilities(k), perm.probabilities(k));
        }
    }

    /// Central differences of the caption loss for one parameter entry.
    fn numeric_grad(p: &ModelParams, kind: ParamKind, idx: usize, exs: &[Example], sup: &Support, eps: f64) -> f64 {
        let loss = |q: &ModelParams| -> f64 {
            exs.iter()
                .map(|ex| {
                    let t = forward_teacher_forced(ex, q, sup, Modulation::NONE).unwrap();
                    ce_loss(&t, &ex.caption).unwrap()
                })
                .sum()
        };
        let mut plus = p.clone();
        plus.tensor_mut(kind)[idx] += eps;
        let mut minus = p.clone();
        minus.tensor_mut(kind)[idx] -= eps;
        (loss(&plus) - loss(&minus)) / (2.0 * eps)
    }

    fn check_gradients(standard: bool, caption_len: usize) {
        let p = random_model(42, 10, standard);
        let sup = Support::full(10);
        let mut rng = Rng::new(7);
        let exs: Vec<Example> = (0..2)
            .map(|i| {
                let caption = (0..caption_len).map(|_| rng.below(10)).collect();
                example(&p, caption, 100 + i)
            })
            .collect();
        let mut analytic = p.zeros_like();
        for ex in &exs {
            let t = forward_teacher_forced(ex, &p, &sup, Modulation::NONE).unwrap();
            analytic.add_scaled(1.0, &backward(&p, &t, &ex.caption).unwrap());
        }
        for kind in ParamKind::ALL {
            for idx in 0..p.tensor(kind).len() {
                let num = numeric_grad(&p, kind, idx, &exs, &sup, 1e-5);
                let ana = analytic.tensor(kind)[idx];
                let err = (num - ana).abs() / (num.abs() + ana.abs()).max(1e-4);
                assert!(err < 1e-5, "{} [{idx}]: analytic {ana} numeric {num}", kind.name());
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_gradients(false, 5);
    }

    #[test]
    fn gradients_match_with_standard_cell_output() {
        check_gradients(true, 5);
    }

    #[test]
    fn gradients_match_through_ten_steps() {
        check_gradients(false, 10);
    }

    #[test]
    fn unused_words_get_no_embedding_gradient() {
        let p = random_model(5, 9, false);
        let sup = Support::from_ids(9, [0, 1, 2, 3]);
        let ex = example(&p, vec![0, 2, 3, 1], 5);
        let t = forward_teacher_forced(&ex, &p, &sup, Modulation::NONE).unwrap();
        let g = backward(&p, &t, &ex.caption).unwrap();
        for w in 4..9 {
            assert!(g.s.column(w).iter().all(|&v| v == 0.0));
            assert!(g.c.row(w).iter().all(|&v| v == 0.0));
        }
        // word 1 is only ever a target, never an input
        assert!(g.s.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_example_doubles_gradient() {
        let p = random_model(8, 6, false);
        let sup = Support::full(6);
        let ex = example(&p, vec![0, 5, 4, 1], 3);
        let t = forward_teacher_forced(&ex, &p, &sup, Modulation::NONE).unwrap();
        let g = backward(&p, &t, &ex.caption).unwrap();
        let mut twice = g.clone();
        twice.add_scaled(1.0, &g);
        let mut doubled = g.clone();
        doubled.scale(2.0);
        assert_eq!(twice, doubled);
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let p = random_model(21, 7, false);
        let sup = Support::full(7);
        let ex = example(&p, vec![0, 3, 5, 2, 1], 6);
        let mut rng = Rng::new(3);
        let ax: Vec<f64> = (0..4).map(|_| rng.uniform(0.0, 1.0)).collect();
        let ah: Vec<f64> = (0..6).map(|_| rng.uniform(0.0, 1.0)).collect();
        let loss = |ax: &[f64], ah: &[f64]| {
            let m = Modulation { embed: Some(ax), hidden: Some(ah) };
            let t = forward_teacher_forced(&ex, &p, &sup, m).unwrap();
            ce_loss(&t, &ex.caption).unwrap()
        };
        let m = Modulation { embed: Some(&ax), hidden: Some(&ah) };
        let t = forward_teacher_forced(&ex, &p, &sup, m).unwrap();
        let dl = ce_logit_grads(&t, &ex.caption, 1.0).unwrap();
        let mut g = p.zeros_like();
        let mut attn = AttentionGrads::zeros(4, 6);
        backprop(&p, &t, &dl, None, &mut g, Some(&mut attn));
        let eps = 1e-6;
        for u in 0..4 {
            let (mut a, mut b) = (ax.clone(), ax.clone());
            a[u] += eps;
            b[u] -= eps;
            let num = (loss(&a, &ah) - loss(&b, &ah)) / (2.0 * eps);
            assert!((num - attn.embed[u]).abs() < 1e-6 * (1.0 + num.abs()));
        }
        for u in 0..6 {
            let (mut a, mut b) = (ah.clone(), ah.clone());
            a[u] += eps;
            b[u] -= eps;
            let num = (loss(&ax, &a) - loss(&ax, &b)) / (2.0 * eps);
            assert!((num - attn.hidden[u]).abs() < 1e-6 * (1.0 + num.abs()));
        }
        // parameter gradients under attention still match
        for kind in [ParamKind::Wih, ParamKind::S, ParamKind::V] {
            for idx in 0..p.tensor(kind).len() {
                let mut plus = p.clone();
                plus.tensor_mut(kind)[idx] += 1e-5;
                let mut minus = p.clone();
                minus.tensor_mut(kind)[idx] -= 1e-5;
                let lp = ce_loss(&forward_teacher_forced(&ex, &plus, &sup, m).unwrap(), &ex.caption).unwrap();
                let lm = ce_loss(&forward_teacher_forced(&ex, &minus, &sup, m).unwrap(), &ex.caption).unwrap();
                let num = (lp - lm) / 2e-5;
                let ana = g.tensor(kind)[idx];
                assert!((num - ana).abs() <= 1e-5 * (num.abs() + ana.abs()).max(1e-4));
            }
        }
    }

    fn dominant_model(sequence: &[usize]) -> ModelParams {
        // Hidden unit u is "on" only at step u: the classifier then reads
        // one dominant word per step.
        let vocab = 6;
        let d = ModelDims {
            d_feat: 1,
            d_emb: 1,
            d_hidden: 1,
            vocab_size: vocab,
        };
        let mut p = ModelParams::init(d, &ModelConfig::default(), &mut Rng::new(0)).unwrap();
        p.scale(0.0);
        p.b_i.0 = vec![40.0];
        p.b_o.0 = vec![40.0];
        p.b_f.0 = vec![-40.0];
        p.b_g.0 = vec![40.0];
        // h ≈ 1 always; with a single hidden unit the same word wins each step
        p.c.set(sequence[0], 0, 5.0);
        p
    }

    #[test]
    fn greedy_dominant_word_and_max_len() {
        let p = dominant_model(&[3]);
        let sup = Support::full(6);
        let out = greedy_decode(&p, &[0.2], &sup, 4, 1, Modulation::NONE).unwrap();
        assert_eq!(out, vec![3, 3, 3, 3]);
        let out = greedy_decode(&p, &[0.2], &sup, 1, 1, Modulation::NONE).unwrap();
        assert_eq!(out.len(), 1);
        assert!(greedy_decode(&p, &[0.2], &sup, 0, 1, Modulation::NONE).is_err());
    }

    #[test]
    fn greedy_stops_at_end_and_breaks_ties_low() {
        let mut p = dominant_model(&[1]);
        let sup = Support::full(6);
        assert_eq!(greedy_decode(&p, &[0.0], &sup, 10, 1, Modulation::NONE).unwrap(), vec![1]);
        // exact tie between words 2 and 4
        p.c.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        p.c.set(2, 0, 1.0);
        p.c.set(4, 0, 1.0);
        let a = greedy_decode(&p, &[0.0], &sup, 3, 1, Modulation::NONE).unwrap();
        assert_eq!(a, vec![2, 2, 2]);
        // deactivating the winner never lets it through
        let sup2 = Support::from_ids(6, [0, 1, 3, 4, 5]);
        let b = greedy_decode(&p, &[0.0], &sup2, 3, 1, Modulation::NONE).unwrap();
        assert_eq!(b, vec![4, 4, 4]);
    }

    #[test]
    fn expand_keeps_existing_entries() {
        let mut p = random_model(2, 5, false);
        let before = p.clone();
        p.expand_vocab(0, 0.1, &mut Rng::new(1));
        assert_eq!(p, before);
        p.expand_vocab(3, 0.1, &mut Rng::new(1));
        assert_eq!(p.dims.vocab_size, 8);
        assert_eq!(p.s.shape(), (4, 8));
        assert_eq!(p.c.shape(), (8, 6));
        for w in 0..5 {
            assert_eq!(p.s.column(w), before.s.column(w));
            assert_eq!(p.c.row(w), before.c.row(w));
        }
    }
}
