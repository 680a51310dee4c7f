//! Teacher/student losses and their gradients with respect to the logits.
//!
//! The teacher sees every training view of a sample through one shared
//! backbone and fuses its per-view logits by averaging. The student sees one
//! view at a time. Its loss is the view-averaged cross-entropy plus
//! `γ · Σ_v KL(p_teacher,v ‖ p_student,v)`, where the teacher distribution is
//! either that view's (separate fusion) or the fused one (joint fusion). The
//! teacher is a constant inside the KL terms, so they never produce teacher
//! gradients.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backbone::Backbone;
use crate::error::{config_err, invalid};
use crate::{Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// KL per view against that view's teacher logits.
    #[default]
    Separate,
    /// KL per view against the teacher's fused logits.
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub gamma: f64,
    pub temperature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { gamma: 1.0, temperature: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(config_err!("gamma must be finite and non-negative, got {}", self.gamma));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(config_err!("temperature must be finite and positive, got {}", self.temperature));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown<T> {
    pub l_cls_teacher: T,
    pub l_cls_student: T,
    pub l_kld_per_view: BTreeMap<u32, T>,
    pub total_teacher: T,
    pub total_student: T,
}

impl<T: Real> LossBreakdown<T> {
    pub fn kld_sum(&self) -> T {
        self.l_kld_per_view.values().copied().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherOutput<T> {
    pub per_view: BTreeMap<u32, Vec<T>>,
    pub fused: Vec<T>,
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let mut out = logits.to_vec();
    crate::backbone::attention::softmax_in_place(&mut out);
    out
}

fn log_softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
    logits.iter().map(|&v| v - lse).collect()
}

fn scaled<T: Real>(logits: &[T], temperature: T) -> Vec<T> {
    logits.iter().map(|&v| v / temperature).collect()
}

/// `-log softmax(logits)[label]`.
pub fn cross_entropy<T: Real>(logits: &[T], label: usize) -> Result<T> {
    if label >= logits.len() {
        return Err(invalid!("label {label} is out of range for {} classes", logits.len()));
    }
    Ok(-log_softmax(logits)[label])
}

/// `softmax(logits) - onehot(label)`.
pub fn cross_entropy_grad<T: Real>(logits: &[T], label: usize) -> Result<Vec<T>> {
    if label >= logits.len() {
        return Err(invalid!("label {label} is out of range for {} classes", logits.len()));
    }
    let mut g = softmax(logits);
    g[label] -= T::one();
    Ok(g)
}

fn check_pair<T>(teacher: &[T], student: &[T], temperature: T) -> Result<()>
where
    T: Real,
{
    if teacher.len() != student.len() {
        return Err(invalid!("teacher has {} logits, student has {}", teacher.len(), student.len()));
    }
    if temperature.partial_cmp(&T::zero()) != Some(core::cmp::Ordering::Greater) {
        return Err(invalid!("temperature must be positive"));
    }
    Ok(())
}

/// `T² · KL(softmax(teacher/T) ‖ softmax(student/T))`.
pub fn kl_distill<T: Real>(teacher: &[T], student: &[T], temperature: T) -> Result<T> {
    check_pair(teacher, student, temperature)?;
    let lp = log_softmax(&scaled(teacher, temperature));
    let lq = log_softmax(&scaled(student, temperature));
    let kl: T = lp.iter().zip(&lq).map(|(&a, &b)| a.exp() * (a - b)).sum();
    // rounding can leave a tiny negative value for identical inputs
    Ok(temperature * temperature * kl.max(T::zero()))
}

/// Gradient of [`kl_distill`] with respect to the student logits:
/// `T · (softmax(student/T) - softmax(teacher/T))`.
pub fn kl_distill_grad<T: Real>(teacher: &[T], student: &[T], temperature: T) -> Result<Vec<T>> {
    check_pair(teacher, student, temperature)?;
    let p = softmax(&scaled(teacher, temperature));
    let q = softmax(&scaled(student, temperature));
    Ok(q.iter().zip(&p).map(|(&a, &b)| temperature * (a - b)).collect())
}

/// Mean of the per-view logits.
pub fn fuse_logits<T: Real>(per_view: &BTreeMap<u32, Vec<T>>) -> Result<Vec<T>> {
    let mut it = per_view.values();
    let first = it.next().ok_or_else(|| invalid!("cannot fuse zero views"))?;
    let mut sum = first.clone();
    for v in it {
        if v.len() != sum.len() {
            return Err(invalid!("per-view logits have different lengths"));
        }
        for (a, &b) in sum.iter_mut().zip(v) {
            *a += b;
        }
    }
    let inv = T::one() / T::from_usize(per_view.len());
    Ok(sum.into_iter().map(|v| v * inv).collect())
}

/// Argmax with ties going to the lowest index.
pub fn predict<T: Real>(logits: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

fn kl_target<T>(teacher: &TeacherOutput<T>, view: u32, mode: FusionMode) -> Result<&[T]> {
    match mode {
        FusionMode::Separate => teacher
            .per_view
            .get(&view)
            .map(Vec::as_slice)
            .ok_or_else(|| invalid!("teacher has no logits for view {view}")),
        FusionMode::Joint => Ok(&teacher.fused),
    }
}

fn check_views<T>(teacher: &TeacherOutput<T>, student: &BTreeMap<u32, Vec<T>>) -> Result<()> {
    if student.is_empty() {
        return Err(invalid!("student logits are empty"));
    }
    for v in teacher.per_view.keys() {
        if !student.contains_key(v) {
            return Err(invalid!("student logits are missing view {v}"));
        }
    }
    for v in student.keys() {
        if !teacher.per_view.contains_key(v) {
            return Err(invalid!("teacher logits are missing view {v}"));
        }
    }
    Ok(())
}

pub fn student_losses<T: Real>(
    teacher: &TeacherOutput<T>,
    student: &BTreeMap<u32, Vec<T>>,
    label: usize,
    weights: &LossWeights,
    mode: FusionMode,
) -> Result<LossBreakdown<T>> {
    check_views(teacher, student)?;
    let temperature = T::from_f64(weights.temperature);
    let mut ce = T::zero();
    let mut kld = BTreeMap::new();
    for (&v, logits) in student {
        ce += cross_entropy(logits, label)?;
        kld.insert(v, kl_distill(kl_target(teacher, v, mode)?, logits, temperature)?);
    }
    let l_cls_student = ce / T::from_usize(student.len());
    let kld_sum: T = kld.values().copied().sum();
    let l_cls_teacher = cross_entropy(&teacher.fused, label)?;
    Ok(LossBreakdown {
        l_cls_teacher,
        l_cls_student,
        total_student: l_cls_student + T::from_f64(weights.gamma) * kld_sum,
        l_kld_per_view: kld,
        total_teacher: l_cls_teacher,
    })
}

/// `dL_teacher/d(per-view logits)` and `dL_student/d(student logits)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGradients<T> {
    pub teacher: BTreeMap<u32, Vec<T>>,
    pub student: BTreeMap<u32, Vec<T>>,
}

pub fn logit_gradients<T: Real>(
    teacher: &TeacherOutput<T>,
    student: &BTreeMap<u32, Vec<T>>,
    label: usize,
    weights: &LossWeights,
    mode: FusionMode,
) -> Result<LogitGradients<T>> {
    check_views(teacher, student)?;
    let temperature = T::from_f64(weights.temperature);
    let gamma = T::from_f64(weights.gamma);

    let inv_teacher = T::one() / T::from_usize(teacher.per_view.len());
    let fused_grad: Vec<T> = cross_entropy_grad(&teacher.fused, label)?.into_iter().map(|g| g * inv_teacher).collect();
    let teacher_grads = teacher.per_view.keys().map(|&v| (v, fused_grad.clone())).collect();

    let inv_student = T::one() / T::from_usize(student.len());
    let mut student_grads = BTreeMap::new();
    for (&v, logits) in student {
        let ce = cross_entropy_grad(logits, label)?;
        let kl = kl_distill_grad(kl_target(teacher, v, mode)?, logits, temperature)?;
        let g = ce.iter().zip(&kl).map(|(&c, &k)| c * inv_student + gamma * k).collect();
        student_grads.insert(v, g);
    }
    Ok(LogitGradients { teacher: teacher_grads, student: student_grads })
}

/// Which networks a training step touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Networks {
    /// Teacher and student, trained jointly.
    Both,
    /// The student alone on cross-entropy (no teacher, no KL).
    StudentOnly,
}

/// Result of one sample's forward and backward pass.
#[derive(Debug, Clone)]
pub struct SampleStep<T> {
    pub losses: LossBreakdown<T>,
    pub teacher_grads: Option<Vec<T>>,
    pub student_grads: Vec<T>,
}

/// Teacher and student built from one backbone architecture, each with its
/// own parameter vector.
#[derive(Debug, Clone)]
pub struct Mkdt {
    pub backbone: Backbone,
    pub weights: LossWeights,
    pub mode: FusionMode,
}

impl Mkdt {
    pub fn new(backbone: Backbone, weights: LossWeights, mode: FusionMode) -> Result<Self> {
        weights.validate()?;
        Ok(Self { backbone, weights, mode })
    }

    pub fn teacher_forward<T: Real>(&self, params: &[T], views: &BTreeMap<u32, Vec<T>>) -> Result<TeacherOutput<T>> {
        if views.is_empty() {
            return Err(invalid!("teacher needs at least one view"));
        }
        let per_view: BTreeMap<u32, Vec<T>> =
            views.iter().map(|(&v, x)| (v, self.backbone.forward(params, x).logits)).collect();
        let fused = fuse_logits(&per_view)?;
        Ok(TeacherOutput { per_view, fused })
    }

    /// Losses only, no tapes kept.
    pub fn losses<T: Real>(
        &self,
        teacher_params: &[T],
        student_params: &[T],
        views: &BTreeMap<u32, Vec<T>>,
        label: usize,
    ) -> Result<LossBreakdown<T>> {
        let teacher = self.teacher_forward(teacher_params, views)?;
        let student = views.iter().map(|(&v, x)| (v, self.backbone.forward(student_params, x).logits)).collect();
        student_losses(&teacher, &student, label, &self.weights, self.mode)
    }

    /// Forward and backward for one multi-view sample. `dropout_seed` seeds
    /// every per-view pass (each view and network gets its own stream).
    pub fn sample_step<T: Real>(
        &self,
        networks: Networks,
        teacher_params: Option<&[T]>,
        student_params: &[T],
        views: &BTreeMap<u32, Vec<T>>,
        label: usize,
        dropout_seed: Option<u64>,
    ) -> Result<SampleStep<T>> {
        if views.is_empty() {
            return Err(invalid!("a training sample needs at least one view"));
        }
        let seed_for = |net: u64, v: u32| dropout_seed.map(|s| crate::rng::derive(s, &[net, v as u64]));

        let mut student_tapes = BTreeMap::new();
        let mut student_logits = BTreeMap::new();
        for (&v, x) in views {
            let (out, tape) = self.backbone.forward_train(student_params, x, seed_for(1, v));
            student_logits.insert(v, out.logits);
            student_tapes.insert(v, tape);
        }

        match networks {
            Networks::Both => {
                let tp = teacher_params.ok_or_else(|| invalid!("joint training needs teacher parameters"))?;
                let mut teacher_tapes = BTreeMap::new();
                let mut per_view = BTreeMap::new();
                for (&v, x) in views {
                    let (out, tape) = self.backbone.forward_train(tp, x, seed_for(0, v));
                    per_view.insert(v, out.logits);
                    teacher_tapes.insert(v, tape);
                }
                let fused = fuse_logits(&per_view)?;
                let teacher = TeacherOutput { per_view, fused };
                let losses = student_losses(&teacher, &student_logits, label, &self.weights, self.mode)?;
                let grads = logit_gradients(&teacher, &student_logits, label, &self.weights, self.mode)?;
                let mut tg = alloc::vec![T::zero(); tp.len()];
                for (v, tape) in &teacher_tapes {
                    self.backbone.backward(tp, tape, &grads.teacher[v], &mut tg);
                }
                let mut sg = alloc::vec![T::zero(); student_params.len()];
                for (v, tape) in &student_tapes {
                    self.backbone.backward(student_params, tape, &grads.student[v], &mut sg);
                }
                Ok(SampleStep { losses, teacher_grads: Some(tg), student_grads: sg })
            }
            Networks::StudentOnly => {
                let inv = T::one() / T::from_usize(views.len());
                let mut ce = T::zero();
                let mut sg = alloc::vec![T::zero(); student_params.len()];
                for (v, tape) in &student_tapes {
                    let logits = &student_logits[v];
                    ce += cross_entropy(logits, label)?;
                    let d: Vec<T> = cross_entropy_grad(logits, label)?.into_iter().map(|g| g * inv).collect();
                    self.backbone.backward(student_params, tape, &d, &mut sg);
                }
                let l_cls_student = ce * inv;
                let losses = LossBreakdown {
                    l_cls_teacher: T::zero(),
                    l_cls_student,
                    l_kld_per_view: BTreeMap::new(),
                    total_teacher: T::zero(),
                    total_student: l_cls_student,
                };
                Ok(SampleStep { losses, teacher_grads: None, student_grads: sg })
            }
        }
    }
}
