//! Central finite-difference checks of analytic gradients.
//!
//! Differences use the five-point stencil
//! `(−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h`, whose O(h⁴) truncation
//! keeps probes sitting near a stationary point of an activation accurate at
//! `h = 1e-3`.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::index;

use crate::distill::{Mkdt, Networks};
use crate::error::invalid;
use crate::rng;
use crate::Result;

pub const STEP: f64 = 1e-3;
pub const DENOMINATOR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradReport {
    pub probes: Vec<Probe>,
    pub max_rel_error: f64,
}

impl GradReport {
    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }

    pub fn worst(&self) -> Option<&Probe> {
        self.probes.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR)
}

/// Compares `analytic` against central differences of `loss` at
/// `probe_count` distinct parameters drawn with `seed`.
pub fn gradcheck<F>(params: &[f64], analytic: &[f64], probe_count: usize, seed: u64, mut loss: F) -> Result<GradReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if params.len() != analytic.len() {
        return Err(invalid!("{} parameters but {} gradient entries", params.len(), analytic.len()));
    }
    let picks = index::sample(&mut rng::seeded(seed), params.len(), probe_count.min(params.len()));
    let mut x = params.to_vec();
    let mut report = GradReport::default();
    for i in picks {
        let mut at = |offset: f64| -> Result<f64> {
            x[i] = params[i] + offset;
            let l = loss(&x);
            x[i] = params[i];
            l
        };
        let numeric = (8.0 * (at(STEP)? - at(-STEP)?) - (at(2.0 * STEP)? - at(-2.0 * STEP)?)) / (12.0 * STEP);
        let rel_error = relative_error(analytic[i], numeric);
        report.max_rel_error = report.max_rel_error.max(rel_error);
        report.probes.push(Probe { index: i, analytic: analytic[i], numeric, rel_error });
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MkdtGradReport {
    /// Teacher parameters against the teacher loss.
    pub teacher: GradReport,
    /// Student parameters against the student loss.
    pub student: GradReport,
}

impl MkdtGradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.teacher.max_rel_error.max(self.student.max_rel_error)
    }

    pub fn probe_count(&self) -> usize {
        self.teacher.probes.len() + self.student.probes.len()
    }
}

/// Checks both networks of `model` on one sample, `probe_count` parameters
/// each, without dropout.
pub fn gradcheck_mkdt(
    model: &Mkdt,
    teacher_params: &[f64],
    student_params: &[f64],
    views: &BTreeMap<u32, Vec<f64>>,
    label: usize,
    probe_count: usize,
    seed: u64,
) -> Result<MkdtGradReport> {
    let step = model.sample_step(Networks::Both, Some(teacher_params), student_params, views, label, None)?;
    let teacher_grads = step.teacher_grads.expect("joint step returns teacher gradients");
    let teacher = gradcheck(teacher_params, &teacher_grads, probe_count, rng::derive(seed, &[0]), |tp| {
        Ok(model.losses(tp, student_params, views, label)?.total_teacher)
    })?;
    let student = gradcheck(student_params, &step.student_grads, probe_count, rng::derive(seed, &[1]), |sp| {
        Ok(model.losses(teacher_params, sp, views, label)?.total_student)
    })?;
    Ok(MkdtGradReport { teacher, student })
}
