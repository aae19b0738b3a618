//! Training a single captioning model over a sequence of tasks.
//!
//! Before task `t` the vocabulary and the model grow by the task's unseen
//! words. Training runs a fixed number of epochs with the chosen method;
//! after every epoch the model is scored by greedy-decoding BLEU-4 on the
//! task's validation images, and the best epoch's parameters are kept. After
//! each task every task seen so far is evaluated on its test images.
//!
//! Inference is task-aware for every method: the output distribution is
//! restricted to the queried task's words, and RATT additionally applies the
//! masks snapshotted at the end of that task.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, RattInference};
use crate::error::{Error, Result};
use crate::ewc::{estimate_fisher, ewc_penalty_and_grad, proximal_penalty_step, shared_param_indices, EwcConfig, FisherDiag, Snapshot};
use crate::linalg::{Rng, Vector};
use crate::lwf::{accumulate_gradients, LwfConfig, TeacherSnapshot};
use crate::metrics::{bleu_stats, forgetting_pct, BleuConfig, BleuStats, ForgettingRecord};
use crate::model::{
    backprop, ce_logit_grads, ce_loss, forward_teacher_forced, greedy_decode, AttentionGrads, Example, Gradients, ModelConfig,
    ModelDims, ModelParams, Modulation, Support,
};
use crate::optim::{Optimizer, OptimizerConfig, OptimizerKind, FIRST_FREE_SLOT};
use crate::ratt::{
    anneal_s, backward_masks_with, compensate_embedding_gradients, compute_masks, embedding_gradients, sparsity_loss_grad,
    update_cumulative, AnnealSchedule, BackwardMasks, CumulativeMasks, MaskSelection, MaskSet, MaskUsage, RattConfig,
    TaskEmbeddings,
};
use crate::splitter::{tokenize, Dataset, SplitResult};
use crate::vocab::{Vocabulary, END_ID};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ft,
    Ewc,
    Lwf,
    Ratt,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ft => "ft",
            Method::Ewc => "ewc",
            Method::Lwf => "lwf",
            Method::Ratt => "ratt",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_decode_len: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub model: ModelConfig,
    pub ewc: EwcConfig,
    pub lwf: LwfConfig,
    pub ratt: RattConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Ft,
            epochs: 10,
            batch_size: 32,
            max_decode_len: 20,
            seed: 0,
            optimizer: OptimizerConfig::default(),
            model: ModelConfig::default(),
            ewc: EwcConfig::default(),
            lwf: LwfConfig::default(),
            ratt: RattConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_decode_len == 0 {
            return Err(Error::Config("batch_size and max_decode_len must be >= 1".into()));
        }
        if self.model.d_emb == 0 || self.model.d_hidden == 0 || !(self.model.init_range > 0.0) {
            return Err(Error::Config("model sizes and init_range must be positive".into()));
        }
        self.optimizer.validate()?;
        self.ewc.validate()?;
        self.lwf.validate()?;
        self.ratt.validate()
    }
}

/// One image with its tokenized reference captions.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageCaptions {
    pub id: u64,
    pub features: Vector,
    pub captions: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub name: String,
    /// Words of the training captions, sorted.
    pub words: Vec<String>,
    pub train: Vec<ImageCaptions>,
    pub valid: Vec<ImageCaptions>,
    pub test: Vec<ImageCaptions>,
}

impl TaskData {
    /// Builds a task from its images; the word list is taken from `train`.
    pub fn new(name: impl Into<String>, train: Vec<ImageCaptions>, valid: Vec<ImageCaptions>, test: Vec<ImageCaptions>) -> Result<Self> {
        let name = name.into();
        if train.is_empty() || valid.is_empty() || test.is_empty() {
            return Err(Error::Task(format!("task {name:?} needs non-empty train, valid and test sets")));
        }
        let words: std::collections::BTreeSet<String> = train.iter().flat_map(|im| im.captions.iter().flatten().cloned()).collect();
        Ok(Self {
            name,
            words: words.into_iter().collect(),
            train,
            valid,
            test,
        })
    }
}

/// Task data for every task of a partitioned split.
pub fn task_data(data: &Dataset, split: &SplitResult) -> Result<Vec<TaskData>> {
    let per_image = split
        .partition
        .as_ref()
        .ok_or_else(|| Error::Definition("split has no train/valid/test partition".into()))?
        .captions_per_image;
    let by_id = data.by_id();
    let images = |ids: &[u64]| -> Result<Vec<ImageCaptions>> {
        ids.iter()
            .map(|id| {
                let im = by_id
                    .get(id)
                    .ok_or_else(|| Error::Definition(format!("split refers to unknown image {id}")))?;
                Ok(ImageCaptions {
                    id: *id,
                    features: im.features.clone(),
                    captions: im.captions.iter().take(per_image).map(|c| tokenize(c)).collect(),
                })
            })
            .collect()
    };
    split
        .tasks
        .iter()
        .map(|t| TaskData::new(t.name.clone(), images(&t.train)?, images(&t.valid)?, images(&t.test)?))
        .collect()
}

/// Registers `new_words` and appends one embedding column and one
/// classifier row per word. Existing entries are untouched.
pub fn expand_model(
    model: &mut ModelParams,
    vocab: &mut Vocabulary,
    new_words: &[String],
    init_range: f64,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    if model.dims.vocab_size != vocab.len() {
        return Err(Error::shape("expand_model", model.dims.vocab_size, vocab.len()));
    }
    let ids = vocab.add_words(new_words)?;
    model.expand_vocab(ids.len(), init_range, rng);
    Ok(ids)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_bleu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskCurve {
    pub task: usize,
    pub name: String,
    pub new_words: usize,
    pub vocab_size: usize,
    /// 1-based; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherSummary {
    pub task: usize,
    pub mean_importance: Vec<(String, f64)>,
}

/// Scores of every task after every training session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub seed: u64,
    pub task_names: Vec<String>,
    /// `bleu[i][j]`: test BLEU-4 of task `j` after training task `i`;
    /// `None` for `j > i`.
    pub bleu: Vec<Vec<Option<f64>>>,
    pub forgetting: Vec<ForgettingRecord>,
    pub curves: Vec<TaskCurve>,
    #[serde(default)]
    pub fisher: Vec<FisherSummary>,
    #[serde(default)]
    pub mask_usage: Vec<MaskUsage>,
}

impl RunReport {
    /// Mean forgetting over the tasks where it is defined.
    pub fn mean_forgetting(&self) -> Option<f64> {
        let v: Vec<f64> = self.forgetting.iter().filter_map(|r| r.percent).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Progress notifications.
#[derive(Clone, Debug)]
pub enum Event<'a> {
    TaskStart { task: usize, name: &'a str, new_words: usize, vocab_size: usize },
    Epoch { task: usize, record: &'a EpochRecord },
    Evaluated { session: usize, task: usize, bleu: f64 },
}

enum MethodState {
    Ft,
    Ewc(Option<(Snapshot, FisherDiag)>),
    Lwf(Option<TeacherSnapshot>),
    Ratt {
        emb: TaskEmbeddings,
        cum: CumulativeMasks,
        snapshots: Vec<MaskSet>,
    },
}

/// A model, its vocabulary and the method's state across tasks.
pub struct ContinualLearner {
    cfg: TrainConfig,
    root: Rng,
    params: ModelParams,
    vocab: Vocabulary,
    state: MethodState,
    trained: usize,
    num_tasks: usize,
}

/// Batch loss, parameter gradients and (RATT) task-embedding gradients.
struct BatchGrads {
    loss: f64,
    grads: Gradients,
    attn: Option<AttentionGrads>,
}

impl ContinualLearner {
    pub fn new(cfg: TrainConfig, d_feat: usize, num_tasks: usize) -> Result<Self> {
        cfg.validate()?;
        if num_tasks == 0 {
            return Err(Error::Task("at least one task is required".into()));
        }
        let root = Rng::new(cfg.seed);
        let vocab = Vocabulary::new();
        let dims = ModelDims {
            d_feat,
            d_emb: cfg.model.d_emb,
            d_hidden: cfg.model.d_hidden,
            vocab_size: vocab.len(),
        };
        dims.validate()?;
        let params = ModelParams::init(dims, &cfg.model, &mut root.fork("init", 0))?;
        let state = match cfg.method {
            Method::Ft => MethodState::Ft,
            Method::Ewc => MethodState::Ewc(None),
            Method::Lwf => MethodState::Lwf(None),
            Method::Ratt => MethodState::Ratt {
                emb: TaskEmbeddings::init(
                    dims.d_emb,
                    dims.d_hidden,
                    num_tasks,
                    cfg.ratt.embedding_init,
                    &mut root.fork("ratt-embed", 0),
                )?,
                cum: CumulativeMasks::empty(dims.d_emb, dims.d_hidden),
                snapshots: Vec::new(),
            },
        };
        Ok(Self {
            cfg,
            root,
            params,
            vocab,
            state,
            trained: 0,
            num_tasks,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Epoch count used for the tasks trained from now on.
    pub fn set_epochs(&mut self, epochs: usize) {
        self.cfg.epochs = epochs;
    }

    pub fn tasks_trained(&self) -> usize {
        self.trained
    }

    /// Snapshotted RATT masks, one per finished task.
    pub fn mask_snapshots(&self) -> &[MaskSet] {
        match &self.state {
            MethodState::Ratt { snapshots, .. } => snapshots,
            _ => &[],
        }
    }

    /// EWC snapshot and Fisher estimate of the last finished task.
    pub fn ewc_state(&self) -> Option<(&Snapshot, &FisherDiag)> {
        match &self.state {
            MethodState::Ewc(Some((s, f))) => Some((s, f)),
            _ => None,
        }
    }

    pub fn cumulative_masks(&self) -> Option<&CumulativeMasks> {
        match &self.state {
            MethodState::Ratt { cum, .. } => Some(cum),
            _ => None,
        }
    }

    fn selection(&self) -> MaskSelection {
        self.cfg.ratt.selection()
    }

    fn ratt_inference(&self) -> Option<RattInference> {
        match &self.state {
            MethodState::Ratt { snapshots, .. } => Some(RattInference {
                masks: snapshots.clone(),
                selection: self.selection(),
            }),
            _ => None,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            self.trained.saturating_sub(1),
            self.cfg.clone(),
            self.params.clone(),
            self.vocab.clone(),
            self.ratt_inference(),
            self.root.clone(),
        )
    }

    /// Grows vocabulary and model by the task's unseen words and records the
    /// task's word set. Returns the new ids.
    pub fn expand_for(&mut self, t: usize, task: &TaskData) -> Result<Vec<usize>> {
        let new_words = self.vocab.unseen(&task.words);
        let ids = expand_model(
            &mut self.params,
            &mut self.vocab,
            &new_words,
            self.cfg.model.init_range,
            &mut self.root.fork("expand", t as u64),
        )?;
        self.vocab.set_task_words(t, &task.words)?;
        Ok(ids)
    }

    fn encode(&self, images: &[ImageCaptions]) -> Result<Vec<Example>> {
        let mut out = Vec::new();
        for im in images {
            for c in &im.captions {
                out.push(Example {
                    features: im.features.clone(),
                    caption: self.vocab.encode(c)?,
                });
            }
        }
        Ok(out)
    }

    /// Trains task `t` (the next one in sequence) and returns its curve.
    pub fn train_task(&mut self, t: usize, task: &TaskData, on_event: &mut dyn FnMut(&Event)) -> Result<TaskCurve> {
        if t != self.trained || t >= self.num_tasks {
            return Err(Error::Task(format!(
                "expected task {} of {}, got {t}",
                self.trained, self.num_tasks
            )));
        }
        let vocab_before = self.vocab.len();
        let new_ids = self.expand_for(t, task)?;
        on_event(&Event::TaskStart {
            task: t,
            name: &task.name,
            new_words: new_ids.len(),
            vocab_size: self.vocab.len(),
        });
        debug_assert_eq!(vocab_before + new_ids.len(), self.params.dims.vocab_size);

        let support = self.vocab.task_support(t)?;
        let examples = self.encode(&task.train)?;
        let cfg = self.cfg.clone();
        let sel = self.selection();
        let backward_masks = match &self.state {
            MethodState::Ratt { cum, .. } => Some(backward_masks_with(cum, self.params.dims, sel)),
            _ => None,
        };
        let ewc_shared = match &self.state {
            MethodState::Ewc(Some((snap, _))) => Some(shared_param_indices(snap.vocab_size, self.params.dims.vocab_size, self.params.dims)?),
            _ => None,
        };

        let mut opt = Optimizer::new(cfg.optimizer.clone());
        let mut shuffle = self.root.fork("shuffle", t as u64);
        let mut curve = Vec::with_capacity(cfg.epochs);
        let mut best: Option<(f64, usize, ModelParams, Option<TaskEmbeddings>)> = None;

        for epoch in 0..cfg.epochs {
            let mut order: Vec<usize> = (0..examples.len()).collect();
            shuffle.shuffle(&mut order);
            let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
            let sched = AnnealSchedule {
                s_max: cfg.ratt.s_max,
                batches: batches.len().max(1),
            };
            let mut loss_sum = 0.0;
            for (b, idx) in batches.iter().enumerate() {
                let batch: Vec<&Example> = idx.iter().map(|&i| &examples[i]).collect();
                let s = anneal_s(b + 1, &sched)?;
                let bg = self.batch_gradients(t, &batch, &support, s, ewc_shared.as_ref())?;
                if !bg.loss.is_finite() || !bg.grads.all_finite() {
                    return Err(Error::Diverged {
                        task: t,
                        epoch: epoch + 1,
                        batch: b + 1,
                        loss: bg.loss,
                    });
                }
                loss_sum += bg.loss;
                opt.begin_step();
                opt.step_params(&mut self.params, &bg.grads, backward_masks.as_ref());
                if let (MethodState::Ewc(Some((snap, fisher))), Some(shared)) = (&self.state, &ewc_shared) {
                    if cfg.optimizer.kind == OptimizerKind::Sgd {
                        proximal_penalty_step(&mut self.params, snap, fisher, &cfg.ewc, shared, cfg.optimizer.lr)?;
                    }
                }
                if let (MethodState::Ratt { emb, .. }, Some(attn)) = (&mut self.state, bg.attn) {
                    let masks = compute_masks(emb, t, s, support.mask())?;
                    let mut g = embedding_gradients(emb, &masks, &attn);
                    compensate_embedding_gradients(&mut g, emb, t, s, &sched);
                    opt.update(FIRST_FREE_SLOT, emb.a_x.as_mut_slice(), g.a_x.as_slice(), None);
                    opt.update(FIRST_FREE_SLOT + 1, emb.a_h.as_mut_slice(), g.a_h.as_slice(), None);
                }
            }
            let masks = self.current_masks(t, &support)?;
            let valid_bleu = corpus_score(&self.params, &self.vocab, &support, masks.as_ref(), sel, &task.valid, cfg.max_decode_len)?;
            let record = EpochRecord {
                epoch: epoch + 1,
                train_loss: loss_sum / batches.len().max(1) as f64,
                valid_bleu,
            };
            on_event(&Event::Epoch { task: t, record: &record });
            curve.push(record);
            if best.as_ref().is_none_or(|(b, ..)| valid_bleu > *b) {
                let emb = match &self.state {
                    MethodState::Ratt { emb, .. } => Some(emb.clone()),
                    _ => None,
                };
                best = Some((valid_bleu, epoch + 1, self.params.clone(), emb));
            }
        }

        let best_epoch = best.as_ref().map(|b| b.1);
        if let Some((_, _, params, emb)) = best {
            self.params = params;
            if let (MethodState::Ratt { emb: e, .. }, Some(best_emb)) = (&mut self.state, emb) {
                *e = best_emb;
            }
        }
        self.finish_task(t, &support, &examples)?;
        self.trained += 1;
        Ok(TaskCurve {
            task: t,
            name: task.name.clone(),
            new_words: new_ids.len(),
            vocab_size: self.vocab.len(),
            best_epoch,
            epochs: curve,
        })
    }

    /// Masks task `t` would be evaluated with right now.
    fn current_masks(&self, t: usize, support: &Support) -> Result<Option<MaskSet>> {
        match &self.state {
            MethodState::Ratt { emb, .. } => {
                let m = compute_masks(emb, t, self.cfg.ratt.s_max, support.mask())?;
                Ok(Some(if self.cfg.ratt.binarize { m.binarized() } else { m }))
            }
            _ => Ok(None),
        }
    }

    fn finish_task(&mut self, t: usize, support: &Support, examples: &[Example]) -> Result<()> {
        let masks = self.current_masks(t, support)?;
        let vocab_len = self.vocab.len();
        let old_vocab = self.vocab.union_support(t + 1, vocab_len);
        match &mut self.state {
            MethodState::Ft => {}
            MethodState::Ratt { cum, snapshots, .. } => {
                let m = masks.expect("RATT state has masks");
                *cum = update_cumulative(cum, &m)?;
                snapshots.push(m);
            }
            MethodState::Ewc(prev) => {
                let n = self.cfg.ewc.fisher_samples.min(examples.len());
                let mut idx: Vec<usize> = (0..examples.len()).collect();
                self.root.fork("fisher", t as u64).shuffle(&mut idx);
                let sample: Vec<Example> = idx[..n].iter().map(|&i| examples[i].clone()).collect();
                let fisher = estimate_fisher(&self.params, &sample, n, support)?;
                *prev = Some((Snapshot::take(&self.params), fisher));
            }
            MethodState::Lwf(teacher) => {
                *teacher = Some(TeacherSnapshot::new(self.params.clone(), old_vocab)?);
            }
        }
        Ok(())
    }

    fn batch_gradients(
        &self,
        t: usize,
        batch: &[&Example],
        support: &Support,
        s: f64,
        ewc_shared: Option<&crate::ewc::SharedSet>,
    ) -> Result<BatchGrads> {
        let scale = 1.0 / batch.len() as f64;
        let params = &self.params;
        let sel = self.selection();
        let masks = match &self.state {
            MethodState::Ratt { emb, .. } => Some(compute_masks(emb, t, s, support.mask())?),
            _ => None,
        };
        let modulation = match &masks {
            Some(m) => Modulation {
                embed: sel.embed.then_some(&m.a_x.0[..]),
                hidden: sel.hidden.then_some(&m.a_h.0[..]),
            },
            None => Modulation::NONE,
        };
        let want_attn = masks.is_some();
        let teacher = match &self.state {
            MethodState::Lwf(Some(teacher)) => Some(teacher),
            _ => None,
        };
        let lwf = &self.cfg.lwf;

        let parts: Vec<(f64, Gradients, Option<AttentionGrads>)> = batch
            .par_iter()
            .map(|ex| {
                let mut g = params.zeros_like();
                if let Some(teacher) = teacher {
                    let (ce, distill) = accumulate_gradients(params, teacher, ex, support, lwf, scale, &mut g)?;
                    return Ok((ce + lwf.lambda * distill, g, None));
                }
                let trace = forward_teacher_forced(ex, params, support, modulation)?;
                let loss = ce_loss(&trace, &ex.caption)?;
                let dlogits = ce_logit_grads(&trace, &ex.caption, scale)?;
                let mut attn = want_attn.then(|| AttentionGrads::zeros(params.dims.d_emb, params.dims.d_hidden));
                backprop(params, &trace, &dlogits, None, &mut g, attn.as_mut());
                Ok((loss, g, attn))
            })
            .collect::<Result<_>>()?;

        let mut loss = 0.0;
        let mut grads = params.zeros_like();
        let mut attn = want_attn.then(|| AttentionGrads::zeros(params.dims.d_emb, params.dims.d_hidden));
        for (l, g, a) in &parts {
            loss += l * scale;
            grads.add_scaled(1.0, g);
            if let (Some(acc), Some(a)) = (attn.as_mut(), a) {
                acc.embed.iter_mut().zip(&a.embed).for_each(|(x, y)| *x += y);
                acc.hidden.iter_mut().zip(&a.hidden).for_each(|(x, y)| *x += y);
            }
        }

        match &self.state {
            MethodState::Ewc(Some((snap, fisher))) => {
                let shared = ewc_shared.expect("shared set computed with the snapshot");
                let (pen, pg) = ewc_penalty_and_grad(params, snap, fisher, &self.cfg.ewc, shared)?;
                loss += pen;
                // under SGD the penalty is applied implicitly after the step
                if self.cfg.optimizer.kind != OptimizerKind::Sgd {
                    grads.add_scaled(1.0, &pg);
                }
            }
            MethodState::Ratt { cum, .. } => {
                let m = masks.as_ref().expect("RATT masks");
                let (la, da) = sparsity_loss_grad(m, cum, sel);
                let w = self.cfg.ratt.sparsity_weight;
                loss += w * la;
                if let Some(acc) = attn.as_mut() {
                    acc.embed.iter_mut().zip(&da.embed).for_each(|(x, y)| *x += w * y);
                    acc.hidden.iter_mut().zip(&da.hidden).for_each(|(x, y)| *x += w * y);
                }
            }
            _ => {}
        }
        Ok(BatchGrads { loss, grads, attn })
    }

    /// Task-aware greedy decode for a finished task `t`.
    pub fn infer(&self, t: usize, features: &[f64]) -> Result<Vec<usize>> {
        task_aware_infer(&self.params, features, t, &self.vocab, self.ratt_inference().as_ref(), self.cfg.max_decode_len)
    }

    /// Corpus BLEU-4 of finished task `t` on `images`.
    pub fn evaluate(&self, t: usize, images: &[ImageCaptions]) -> Result<f64> {
        evaluate_task(&self.params, &self.vocab, self.ratt_inference().as_ref(), t, images, self.cfg.max_decode_len)
    }
}

/// Greedy decode restricted to task `t`'s words; RATT models also apply the
/// task's snapshotted masks.
pub fn task_aware_infer(
    model: &ModelParams,
    features: &[f64],
    t: usize,
    vocab: &Vocabulary,
    ratt: Option<&RattInference>,
    max_len: usize,
) -> Result<Vec<usize>> {
    let support = vocab.task_support(t)?;
    let masks = match ratt {
        Some(r) => Some(
            r.masks
                .get(t)
                .ok_or_else(|| Error::Task(format!("no masks were snapshotted for task {t}")))?,
        ),
        None => None,
    };
    let sel = ratt.map_or(MaskSelection::ALL, |r| r.selection);
    decode(model, features, &support, masks, sel, max_len)
}

fn decode(
    model: &ModelParams,
    features: &[f64],
    support: &Support,
    masks: Option<&MaskSet>,
    sel: MaskSelection,
    max_len: usize,
) -> Result<Vec<usize>> {
    let modulation = match masks {
        Some(m) => Modulation {
            embed: sel.embed.then_some(&m.a_x.0[..]),
            hidden: sel.hidden.then_some(&m.a_h.0[..]),
        },
        None => Modulation::NONE,
    };
    greedy_decode(model, features, support, max_len, END_ID, modulation)
}

fn corpus_score(
    model: &ModelParams,
    vocab: &Vocabulary,
    support: &Support,
    masks: Option<&MaskSet>,
    sel: MaskSelection,
    images: &[ImageCaptions],
    max_len: usize,
) -> Result<f64> {
    let cfg = BleuConfig::default();
    let stats: Vec<BleuStats> = images
        .par_iter()
        .map(|im| {
            let ids = decode(model, &im.features, support, masks, sel, max_len)?;
            bleu_stats(&vocab.decode(&ids), &im.captions, &cfg)
        })
        .collect::<Result<_>>()?;
    let mut total = BleuStats::zero(cfg.max_n);
    for s in &stats {
        total.add(s);
    }
    Ok(total.score(&cfg))
}

/// Corpus BLEU-4 of task `t` under task-aware inference.
pub fn evaluate_task(
    model: &ModelParams,
    vocab: &Vocabulary,
    ratt: Option<&RattInference>,
    t: usize,
    images: &[ImageCaptions],
    max_len: usize,
) -> Result<f64> {
    let support = vocab.task_support(t)?;
    let masks = match ratt {
        Some(r) => Some(r.masks.get(t).ok_or_else(|| Error::Task(format!("no masks for task {t}")))?),
        None => None,
    };
    let sel = ratt.map_or(MaskSelection::ALL, |r| r.selection);
    corpus_score(model, vocab, &support, masks, sel, images, max_len)
}

/// Report plus the checkpoint taken after every task.
pub struct RunOutcome {
    pub report: RunReport,
    pub checkpoints: Vec<Checkpoint>,
}

pub fn run_sequence(tasks: &[TaskData], cfg: &TrainConfig) -> Result<RunOutcome> {
    run_sequence_with(tasks, cfg, &mut |_| {})
}

pub fn run_sequence_with(tasks: &[TaskData], cfg: &TrainConfig, on_event: &mut dyn FnMut(&Event)) -> Result<RunOutcome> {
    let first = tasks
        .first()
        .ok_or_else(|| Error::Task("at least one task is required".into()))?;
    let d_feat = first
        .train
        .first()
        .map(|im| im.features.len())
        .ok_or_else(|| Error::Task("first task has no training images".into()))?;
    let k = tasks.len();
    let mut learner = ContinualLearner::new(cfg.clone(), d_feat, k)?;
    let mut bleu = vec![vec![None; k]; k];
    let mut curves = Vec::with_capacity(k);
    let mut fisher = Vec::new();
    let mut checkpoints = Vec::with_capacity(k);
    for (t, task) in tasks.iter().enumerate() {
        curves.push(learner.train_task(t, task, on_event)?);
        if let MethodState::Ewc(Some((_, f))) = &learner.state {
            fisher.push(FisherSummary {
                task: t,
                mean_importance: f.summary().into_iter().map(|(n, v)| (n.to_string(), v)).collect(),
            });
        }
        for (j, prev) in tasks.iter().enumerate().take(t + 1) {
            let score = learner.evaluate(j, &prev.test)?;
            on_event(&Event::Evaluated { session: t, task: j, bleu: score });
            bleu[t][j] = Some(score);
        }
        checkpoints.push(learner.checkpoint());
    }
    let forgetting = (0..k)
        .map(|t| {
            let own = bleu[t][t].unwrap_or(0.0);
            let last = bleu[k - 1][t].unwrap_or(0.0);
            ForgettingRecord {
                task: t,
                after_own: own,
                after_last: last,
                percent: if t + 1 < k { forgetting_pct(own, last) } else { None },
            }
        })
        .collect();
    let mask_usage = match &learner.state {
        MethodState::Ratt { snapshots, .. } => {
            let mut cum = CumulativeMasks::empty(learner.params.dims.d_emb, learner.params.dims.d_hidden);
            snapshots
                .iter()
                .map(|m| {
                    cum = update_cumulative(&cum, m)?;
                    Ok(MaskUsage::measure(m, &cum))
                })
                .collect::<Result<_>>()?
        }
        _ => Vec::new(),
    };
    Ok(RunOutcome {
        report: RunReport {
            method: cfg.method,
            seed: cfg.seed,
            task_names: tasks.iter().map(|t| t.name.clone()).collect(),
            bleu,
            forgetting,
            curves,
            fisher,
            mask_usage,
        },
        checkpoints,
    })
}

/// Backward masks RATT would use for the next task, for inspection.
pub fn next_backward_masks(learner: &ContinualLearner) -> Option<BackwardMasks> {
    learner
        .cumulative_masks()
        .map(|cum| backward_masks_with(cum, learner.params.dims, learner.selection()))
}
