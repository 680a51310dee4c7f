//! Joint teacher/student training.
//!
//! Each step draws a batch of whole multi-view samples, runs the teacher on
//! every training view and the student on each view separately, and updates
//! both networks from their own losses with AdamW. Per-sample gradients go
//! through an [`Executor`] and are summed in sample order, so the result does
//! not depend on how the executor schedules work.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{PreparedClip, PreparedSample};
use crate::distill::{FusionMode, LossWeights, Mkdt, Networks, SampleStep};
use crate::error::invalid;
use crate::eval::evaluate_accuracy;
use crate::optim::{adamw_step, AdamWConfig, AdamWState};
use crate::rng::{derive, seeded};
use crate::{Executor, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub fusion_mode: FusionMode,
    pub gamma: f64,
    pub temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let opt = AdamWConfig::default();
        let loss = LossWeights::default();
        Self {
            lr: opt.lr,
            epochs: 15,
            batch_size: 8,
            weight_decay: opt.weight_decay,
            beta1: opt.beta1,
            beta2: opt.beta2,
            eps: opt.eps,
            seed: 0,
            fusion_mode: FusionMode::Separate,
            gamma: loss.gamma,
            temperature: loss.temperature,
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { gamma: self.gamma, temperature: self.temperature }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid!("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid!("batch_size must be at least 1"));
        }
        self.optimizer().validate()?;
        self.loss_weights().validate()
    }

    /// Seed of the teacher (`0`) or student (`1`) initialisation.
    pub fn init_seed(&self, network: u64) -> u64 {
        derive(self.seed, &[10, network])
    }
}

/// Loss terms of one step (batch means) or one epoch (means over steps).
#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    /// Global step count, starting at 1.
    pub step: usize,
    /// Absent when the teacher is not trained.
    pub teacher_cls: Option<f64>,
    pub student_cls: f64,
    pub student_kld: BTreeMap<u32, f64>,
    pub student_total: f64,
    /// Student accuracy on the validation clips; epoch records only.
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub teacher: Option<Vec<f32>>,
    pub student: Vec<f32>,
}

/// Receives training progress. Errors abort training and are passed back.
pub trait TrainSink {
    fn on_step(&mut self, record: &LossRecord) -> Result<()>;
    /// Called at the end of every epoch. `best` marks the best validation
    /// accuracy so far (earliest epoch on ties).
    fn on_epoch(&mut self, record: &LossRecord, weights: &Weights, best: bool) -> Result<()>;
}

/// Discards everything.
impl TrainSink for () {
    fn on_step(&mut self, _: &LossRecord) -> Result<()> {
        Ok(())
    }
    fn on_epoch(&mut self, _: &LossRecord, _: &Weights, _: bool) -> Result<()> {
        Ok(())
    }
}

/// Keeps every record in memory.
#[derive(Debug, Default, Clone)]
pub struct Recorder {
    pub steps: Vec<LossRecord>,
    pub epochs: Vec<LossRecord>,
}

impl TrainSink for Recorder {
    fn on_step(&mut self, record: &LossRecord) -> Result<()> {
        self.steps.push(record.clone());
        Ok(())
    }
    fn on_epoch(&mut self, record: &LossRecord, _: &Weights, _: bool) -> Result<()> {
        self.epochs.push(record.clone());
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: Weights,
    pub best_epoch: usize,
    pub best_val_acc: Option<f64>,
    pub steps: usize,
}

struct Accum {
    teacher: f64,
    student: f64,
    total: f64,
    kld: BTreeMap<u32, f64>,
    n: usize,
}

impl Accum {
    fn new() -> Self {
        Self { teacher: 0.0, student: 0.0, total: 0.0, kld: BTreeMap::new(), n: 0 }
    }

    fn add(&mut self, teacher: f64, student: f64, total: f64, kld: &BTreeMap<u32, f64>) {
        self.teacher += teacher;
        self.student += student;
        self.total += total;
        for (&v, &k) in kld {
            *self.kld.entry(v).or_default() += k;
        }
        self.n += 1;
    }

    fn record(&self, epoch: usize, step: usize, with_teacher: bool) -> LossRecord {
        let inv = 1.0 / self.n as f64;
        LossRecord {
            epoch,
            step,
            teacher_cls: with_teacher.then_some(self.teacher * inv),
            student_cls: self.student * inv,
            student_kld: self.kld.iter().map(|(&v, &k)| (v, k * inv)).collect(),
            student_total: self.total * inv,
            val_acc: None,
        }
    }
}

/// Trains from scratch. With [`Networks::StudentOnly`] only the student is
/// built and it learns from cross-entropy alone.
pub fn train<E: Executor, S: TrainSink>(
    model: &Mkdt,
    networks: Networks,
    cfg: &TrainConfig,
    samples: &[PreparedSample],
    val: &[PreparedClip],
    exec: &E,
    sink: &mut S,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(invalid!("training set is empty"));
    }
    let backbone = &model.backbone;
    let inputs: Vec<BTreeMap<u32, Vec<f32>>> = samples
        .iter()
        .map(|s| s.views.iter().map(|(&v, f)| Ok((v, backbone.input_from::<f32>(f)?))).collect())
        .collect::<Result<_>>()?;
    for (s, x) in samples.iter().zip(&inputs) {
        if x.is_empty() {
            return Err(invalid!("training sample has no views"));
        }
        if s.label >= backbone.config().n_classes {
            return Err(invalid!("label {} is out of range for {} classes", s.label, backbone.config().n_classes));
        }
    }

    let with_teacher = networks == Networks::Both;
    let opt = cfg.optimizer();
    let mut weights = Weights {
        teacher: with_teacher.then(|| backbone.init_params(cfg.init_seed(0))),
        student: backbone.init_params(cfg.init_seed(1)),
    };
    let n_params = backbone.param_count();
    let mut teacher_state = AdamWState::<f32>::new(if with_teacher { n_params } else { 0 });
    let mut student_state = AdamWState::<f32>::new(n_params);

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0;
    let mut best: Option<(usize, f64)> = None;
    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut seeded(derive(cfg.seed, &[20, epoch as u64])));
        let mut epoch_acc = Accum::new();
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let results: Vec<Result<SampleStep<f32>>> = exec.map(batch.len(), |k| {
                let i = batch[k];
                model.sample_step(
                    networks,
                    weights.teacher.as_deref(),
                    &weights.student,
                    &inputs[i],
                    samples[i].label,
                    Some(derive(cfg.seed, &[30, step as u64, i as u64])),
                )
            });

            let inv = 1.0 / batch.len() as f32;
            let mut tg = alloc::vec![0.0f32; if with_teacher { n_params } else { 0 }];
            let mut sg = alloc::vec![0.0f32; n_params];
            let mut step_acc = Accum::new();
            for r in results {
                let r = r?;
                let l = &r.losses;
                let kld = l.l_kld_per_view.iter().map(|(&v, &k)| (v, k as f64)).collect();
                step_acc.add(l.total_teacher as f64, l.l_cls_student as f64, l.total_student as f64, &kld);
                if let Some(g) = &r.teacher_grads {
                    for (a, &b) in tg.iter_mut().zip(g) {
                        *a += b;
                    }
                }
                for (a, &b) in sg.iter_mut().zip(&r.student_grads) {
                    *a += b;
                }
            }
            if let Some(tp) = weights.teacher.as_mut() {
                tg.iter_mut().for_each(|g| *g *= inv);
                adamw_step(tp, &tg, &mut teacher_state, &opt);
            }
            sg.iter_mut().for_each(|g| *g *= inv);
            adamw_step(&mut weights.student, &sg, &mut student_state, &opt);

            let rec = step_acc.record(epoch, step, with_teacher);
            epoch_acc.add(rec.teacher_cls.unwrap_or(0.0), rec.student_cls, rec.student_total, &rec.student_kld);
            sink.on_step(&rec)?;
        }

        let mut rec = epoch_acc.record(epoch, step, with_teacher);
        // without validation clips the latest epoch counts as the best one
        let mut is_best = true;
        if !val.is_empty() {
            let acc = evaluate_accuracy(backbone, &weights.student, val, exec)?.overall;
            rec.val_acc = Some(acc);
            is_best = best.is_none_or(|(_, b)| acc > b);
            if is_best {
                best = Some((epoch, acc));
            }
        } else {
            best = Some((epoch, f64::NAN));
        }
        sink.on_epoch(&rec, &weights, is_best)?;
    }

    let (best_epoch, best_acc) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { weights, best_epoch, best_val_acc: (!val.is_empty()).then_some(best_acc), steps: step })
}
