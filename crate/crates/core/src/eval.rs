//! Classification accuracy, overall and per view.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::backbone::Backbone;
use crate::data::{PreparedClip, PreparedSample};
use crate::distill::{fuse_logits, predict};
use crate::error::invalid;
use crate::{Executor, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Accuracy {
    pub overall: f64,
    pub per_view: BTreeMap<u32, f64>,
    pub correct: usize,
    pub total: usize,
}

/// Tallies `(view, label, prediction)` triples.
pub fn accuracy_from_predictions(records: &[(u32, usize, usize)]) -> Result<Accuracy> {
    if records.is_empty() {
        return Err(invalid!("cannot score an empty clip list"));
    }
    let mut tally: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for &(view, label, pred) in records {
        let e = tally.entry(view).or_default();
        e.0 += (label == pred) as usize;
        e.1 += 1;
    }
    let correct = tally.values().map(|t| t.0).sum();
    let per_view = tally.into_iter().map(|(v, (c, n))| (v, c as f64 / n as f64)).collect();
    Ok(Accuracy { overall: correct as f64 / records.len() as f64, per_view, correct, total: records.len() })
}

/// Scores single-view predictions of one network on `clips`.
pub fn evaluate_accuracy<E: Executor>(
    backbone: &Backbone,
    params: &[f32],
    clips: &[PreparedClip],
    exec: &E,
) -> Result<Accuracy> {
    if clips.is_empty() {
        return Err(invalid!("cannot score an empty clip list"));
    }
    let preds = exec.map(clips.len(), |i| -> Result<usize> {
        let x = backbone.input_from::<f32>(&clips[i].frames)?;
        Ok(predict(&backbone.forward(params, &x).logits))
    });
    let mut records = Vec::with_capacity(clips.len());
    for (c, p) in clips.iter().zip(preds) {
        records.push((c.view_id, c.label, p?));
    }
    accuracy_from_predictions(&records)
}

/// Multi-view teacher scores: fused-logit accuracy, and the accuracy each
/// view's logits reach on their own.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherAccuracy {
    pub fused: f64,
    pub per_view: BTreeMap<u32, f64>,
    pub samples: usize,
}

impl TeacherAccuracy {
    pub fn best_single_view(&self) -> f64 {
        self.per_view.values().copied().fold(0.0, f64::max)
    }
}

pub fn evaluate_teacher<E: Executor>(
    backbone: &Backbone,
    params: &[f32],
    samples: &[PreparedSample],
    exec: &E,
) -> Result<TeacherAccuracy> {
    if samples.is_empty() {
        return Err(invalid!("cannot score an empty sample list"));
    }
    let outs = exec.map(samples.len(), |i| -> Result<BTreeMap<u32, Vec<f32>>> {
        samples[i]
            .views
            .iter()
            .map(|(&v, f)| Ok((v, backbone.forward(params, &backbone.input_from::<f32>(f)?).logits)))
            .collect()
    });
    let mut fused_correct = 0;
    let mut view_records = Vec::new();
    for (s, out) in samples.iter().zip(outs) {
        let per_view = out?;
        fused_correct += (predict(&fuse_logits(&per_view)?) == s.label) as usize;
        for (&v, logits) in &per_view {
            view_records.push((v, s.label, predict(logits)));
        }
    }
    Ok(TeacherAccuracy {
        fused: fused_correct as f64 / samples.len() as f64,
        per_view: accuracy_from_predictions(&view_records)?.per_view,
        samples: samples.len(),
    })
}
