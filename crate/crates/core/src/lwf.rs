//! Recurrent learning without forgetting.
//!
//! The model after the previous task is frozen as a teacher. At every step
//! the student's input embedding is fed to the teacher too, while each
//! network keeps its own hidden and cell state. A temperature-scaled
//! cross-entropy over the old vocabulary ties the student's distribution to
//! the teacher's. The teacher is a constant target: no gradient flows
//! through it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::softmax_dense;
use crate::model::{backprop, ce_logit_grads, ce_loss, forward_teacher_forced, head_backward, head_logits, run_lstm, Example, ForwardTrace, Gradients, ModelParams, Modulation, Support};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LwfConfig {
    pub lambda: f64,
    pub temperature: f64,
}

impl Default for LwfConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            temperature: 2.0,
        }
    }
}

impl LwfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("LwF lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        Ok(())
    }
}

/// Frozen previous-task model and the vocabulary it was trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherSnapshot {
    params: ModelParams,
    old_vocab: Support,
}

impl TeacherSnapshot {
    /// `old_vocab` must be a support over the teacher's vocabulary.
    pub fn new(params: ModelParams, old_vocab: Support) -> Result<Self> {
        if old_vocab.len() != params.dims.vocab_size {
            return Err(Error::shape("teacher vocabulary", params.dims.vocab_size, old_vocab.len()));
        }
        Ok(Self { params, old_vocab })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn old_vocab(&self) -> &Support {
        &self.old_vocab
    }
}

/// Student trace plus both networks' logits over the old vocabulary, one
/// vector per step, in ascending word-id order.
#[derive(Clone, Debug)]
pub struct DistillPair {
    pub student: ForwardTrace,
    pub student_old: Vec<Vec<f64>>,
    pub teacher_old: Vec<Vec<f64>>,
    old_in_student: Support,
}

pub fn distill_forward(
    student: &ModelParams,
    teacher: &TeacherSnapshot,
    ex: &Example,
    support: &Support,
) -> Result<DistillPair> {
    let trace = forward_teacher_forced(ex, student, support, Modulation::NONE)?;
    let old_in_student = Support::from_ids(student.dims.vocab_size, teacher.old_vocab.active().iter().copied());
    if teacher.old_vocab.active().last().is_some_and(|&w| w >= student.dims.vocab_size) {
        return Err(Error::Vocabulary("teacher vocabulary exceeds the student's".into()));
    }
    let raw: Vec<Vec<f64>> = trace.raw_inputs().map(<[f64]>::to_vec).collect();
    let teacher_h = run_lstm(&teacher.params, raw, Modulation::NONE)?;
    let teacher_old = teacher_h
        .iter()
        .map(|h| head_logits(&teacher.params.c, h, &teacher.old_vocab))
        .collect();
    let student_old = (0..trace.len())
        .map(|k| head_logits(&student.c, trace.hidden(k), &old_in_student))
        .collect();
    Ok(DistillPair {
        student: trace,
        student_old,
        teacher_old,
        old_in_student,
    })
}

fn tempered(z: &[f64], t: f64) -> Vec<f64> {
    softmax_dense(&z.iter().map(|v| v / t).collect::<Vec<_>>())
}

/// `Σ_n H(γ(teacher_n), γ(student_n))` with `γ` the softmax at temperature
/// `T`. Zero when the old vocabulary is empty.
pub fn distill_loss(student_old: &[Vec<f64>], teacher_old: &[Vec<f64>], cfg: &LwfConfig) -> f64 {
    let t = cfg.temperature;
    student_old
        .iter()
        .zip(teacher_old)
        .filter(|(s, _)| !s.is_empty())
        .map(|(s, z)| {
            let q = tempered(z, t);
            let zs: Vec<f64> = s.iter().map(|v| v / t).collect();
            let max = zs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + zs.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            q.iter().zip(&zs).map(|(q, z)| -q * (z - lse)).sum::<f64>()
        })
        .sum()
}

/// `∂ distill_loss / ∂ student_old`: `(γ(student) − γ(teacher)) / T` per step.
pub fn distill_grad(student_old: &[Vec<f64>], teacher_old: &[Vec<f64>], cfg: &LwfConfig) -> Vec<Vec<f64>> {
    let t = cfg.temperature;
    student_old
        .iter()
        .zip(teacher_old)
        .map(|(s, z)| {
            if s.is_empty() {
                return Vec::new();
            }
            let r = tempered(s, t);
            let q = tempered(z, t);
            r.iter().zip(&q).map(|(r, q)| (r - q) / t).collect()
        })
        .collect()
}

pub fn lwf_total_loss(ce: f64, distill: f64, lambda: f64) -> f64 {
    ce + lambda * distill
}

/// Accumulates `scale · ∂(CE + λ·distill)/∂θ` for one example into `grads`;
/// returns `(ce, distill)`.
pub fn accumulate_gradients(
    student: &ModelParams,
    teacher: &TeacherSnapshot,
    ex: &Example,
    support: &Support,
    cfg: &LwfConfig,
    scale: f64,
    grads: &mut Gradients,
) -> Result<(f64, f64)> {
    let pair = distill_forward(student, teacher, ex, support)?;
    let ce = ce_loss(&pair.student, &ex.caption)?;
    let dlogits = ce_logit_grads(&pair.student, &ex.caption, scale)?;
    let distill = distill_loss(&pair.student_old, &pair.teacher_old, cfg);
    let dold = distill_grad(&pair.student_old, &pair.teacher_old, cfg);
    let dh = student.dims.d_hidden;
    let mut extra = vec![vec![0.0; dh]; pair.student.len()];
    for (k, dz) in dold.iter().enumerate() {
        let dz: Vec<f64> = dz.iter().map(|v| v * cfg.lambda * scale).collect();
        head_backward(&student.c, &mut grads.c, pair.student.hidden(k), &pair.old_in_student, &dz, &mut extra[k]);
    }
    backprop(student, &pair.student, &dlogits, Some(&extra), grads, None);
    Ok((ce, distill))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;
    use crate::model::{ModelConfig, ModelDims, ParamKind};

    fn model(vocab: usize, seed: u64) -> ModelParams {
        let dims = ModelDims { d_feat: 3, d_emb: 4, d_hidden: 5, vocab_size: vocab };
        ModelParams::init(dims, &ModelConfig::default(), &mut Rng::new(seed)).unwrap()
    }

    fn example() -> Example {
        Example { features: vec![0.5, -0.2, 0.9].into(), caption: vec![0, 3, 4, 2, 1] }
    }

    #[test]
    fn identical_networks_have_zero_gradient() {
        let p = model(6, 1);
        let teacher = TeacherSnapshot::new(p.clone(), Support::full(6)).unwrap();
        let pair = distill_forward(&p, &teacher, &example(), &Support::full(6)).unwrap();
        assert_eq!(pair.student_old.len(), 5);
        assert_eq!(pair.student_old, pair.teacher_old);
        let cfg = LwfConfig::default();
        let g = distill_grad(&pair.student_old, &pair.teacher_old, &cfg);
        assert!(g.iter().flatten().all(|v| v.abs() <= 1e-15));
        let entropy: f64 = pair
            .teacher_old
            .iter()
            .map(|z| tempered(z, 2.0).iter().map(|q| -q * q.ln()).sum::<f64>())
            .sum();
        assert!((distill_loss(&pair.student_old, &pair.teacher_old, &cfg) - entropy).abs() < 1e-12);
    }

    #[test]
    fn hand_values() {
        let cfg = LwfConfig { lambda: 1.0, temperature: 1.0 };
        let teacher = vec![vec![0.8f64.ln(), 0.2f64.ln()]];
        let student = vec![vec![0.0, 0.0]];
        assert!((distill_loss(&student, &teacher, &cfg) - 2f64.ln()).abs() < 1e-12);
        // near one-hot on both sides
        let hot = vec![vec![60.0, -60.0]];
        assert!(distill_loss(&hot, &hot, &cfg) < 1e-40);
        assert_eq!(distill_loss(&[vec![]], &[vec![]], &cfg), 0.0);
        assert_eq!(lwf_total_loss(1.0, 0.5, 2.0), 2.0);
        assert_eq!(lwf_total_loss(1.3, 0.5, 0.0), 1.3);
    }

    #[test]
    fn teacher_ignores_student_recurrence() {
        let p = model(6, 2);
        let teacher = TeacherSnapshot::new(model(4, 3), Support::full(4)).unwrap();
        let a = distill_forward(&p, &teacher, &Example { caption: vec![0, 3, 2, 1], ..example() }, &Support::full(6)).unwrap();
        let mut q = p.clone();
        q.w_ih = crate::linalg::Matrix::zeros(5, 5);
        let b = distill_forward(&q, &teacher, &Example { caption: vec![0, 3, 2, 1], ..example() }, &Support::full(6)).unwrap();
        assert_eq!(a.teacher_old, b.teacher_old);
        assert_ne!(a.student_old, b.student_old);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let teacher = TeacherSnapshot::new(model(4, 5), Support::full(4)).unwrap();
        let p = model(6, 6);
        let ex = example();
        let support = Support::full(6);
        let cfg = LwfConfig { lambda: 0.7, temperature: 2.0 };
        let total = |m: &ModelParams| {
            let pair = distill_forward(m, &teacher, &ex, &support).unwrap();
            lwf_total_loss(
                ce_loss(&pair.student, &ex.caption).unwrap(),
                distill_loss(&pair.student_old, &pair.teacher_old, &cfg),
                cfg.lambda,
            )
        };
        let mut g = p.zeros_like();
        accumulate_gradients(&p, &teacher, &ex, &support, &cfg, 1.0, &mut g).unwrap();
        for kind in ParamKind::ALL {
            for idx in 0..p.tensor(kind).len() {
                let mut a = p.clone();
                a.tensor_mut(kind)[idx] += 1e-5;
                let mut b = p.clone();
                b.tensor_mut(kind)[idx] -= 1e-5;
                let num = (total(&a) - total(&b)) / 2e-5;
                let ana = g.tensor(kind)[idx];
                assert!((num - ana).abs() <= 1e-6 * (1.0 + ana.abs()), "{kind:?}[{idx}]: {num} vs {ana}");
            }
        }
    }
}
