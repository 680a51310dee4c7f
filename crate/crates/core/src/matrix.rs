//! Leave-one-view-out experiment runs and their aggregation.
//!
//! One run trains on a fold's training actors and evaluates the student on
//! the validation actors' clips from the held-out view. Two modes exist: the
//! distilled student (trained jointly with the multi-view teacher) and a
//! single-view baseline trained alone on cross-entropy.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig};
use crate::data::{
    make_cross_view_split, stratified_actor_folds, Dataset, PreparedClip, PreparedSample, Preprocess, SplitPlan,
};
use crate::distill::{Mkdt, Networks};
use crate::error::invalid;
use crate::eval::{evaluate_accuracy, evaluate_teacher, TeacherAccuracy};
use crate::train::{train, TrainConfig, TrainSink};
use crate::{Executor, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    MultiViewDistilled,
    SingleViewBaseline,
}

impl RunMode {
    pub const ALL: [RunMode; 2] = [RunMode::MultiViewDistilled, RunMode::SingleViewBaseline];

    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::MultiViewDistilled => "multi_view_distilled",
            RunMode::SingleViewBaseline => "single_view_baseline",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| invalid!("unknown mode {s:?}; expected multi_view_distilled or single_view_baseline"))
    }
}

/// Training data of the single-view baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineViews {
    /// The training view numerically closest to the test view (lower id on ties).
    #[default]
    Closest,
    /// Every training view's clips as independent single-view samples.
    Pooled,
}

/// Training view used by [`BaselineViews::Closest`].
pub fn closest_view(train_views: &BTreeSet<u32>, test_view: u32) -> Option<u32> {
    // BTreeSet iterates in increasing order, so min_by_key keeps the lower id
    train_views.iter().copied().min_by_key(|&v| v.abs_diff(test_view))
}

/// Everything a run needs besides the data and the split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    #[serde(default)]
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub preprocess: Preprocess,
    #[serde(default)]
    pub baseline_views: BaselineViews,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            train: TrainConfig::default(),
            preprocess: Preprocess::default(),
            baseline_views: BaselineViews::Closest,
        }
    }
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.train.validate()?;
        self.preprocess.validate()?;
        let [t, _, _] = self.backbone.input;
        if self.preprocess.frames != t {
            return Err(crate::error::config_err!(
                "preprocess.frames is {} but the backbone input has {t} frames",
                self.preprocess.frames
            ));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<Mkdt> {
        Mkdt::new(Backbone::new(self.backbone.clone())?, self.train.loss_weights(), self.train.fusion_mode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RunSpec {
    pub test_view: u32,
    pub fold: usize,
    pub mode: RunMode,
}

impl RunSpec {
    /// Directory-friendly identifier, e.g. `view1_fold0_multi_view_distilled`.
    pub fn name(&self) -> String {
        alloc::format!("view{}_fold{}_{}", self.test_view, self.fold, self.mode.as_str())
    }
}

/// Every (test view, fold, mode) combination, test view outermost.
pub fn plan_runs(dataset: &Dataset, k_folds: usize, modes: &[RunMode], views: Option<&[u32]>) -> Result<Vec<RunSpec>> {
    if dataset.view_ids().len() < 2 {
        return Err(invalid!(
            "leave-one-view-out needs at least 2 views, the dataset has {}",
            dataset.view_ids().len()
        ));
    }
    if k_folds == 0 || k_folds > dataset.actors().len() {
        return Err(invalid!("{k_folds} folds requested but the dataset has {} actors", dataset.actors().len()));
    }
    if modes.is_empty() {
        return Err(invalid!("no run modes selected"));
    }
    let test_views: Vec<u32> = match views {
        Some(vs) => {
            if let Some(v) = vs.iter().find(|v| !dataset.view_ids().contains(v)) {
                return Err(invalid!("test view {v} is not in the dataset"));
            }
            vs.to_vec()
        }
        None => dataset.view_ids().to_vec(),
    };
    let mut runs = Vec::new();
    for &test_view in &test_views {
        for fold in 0..k_folds {
            for &mode in modes {
                runs.push(RunSpec { test_view, fold, mode });
            }
        }
    }
    Ok(runs)
}

/// Prepared data of one run.
#[derive(Debug, Clone)]
pub struct RunData {
    pub train: Vec<PreparedSample>,
    /// Held-out view clips of the validation actors.
    pub val: Vec<PreparedClip>,
    /// Validation actors on the training views, for scoring the teacher.
    pub val_train_views: Vec<PreparedSample>,
    pub baseline_view: Option<u32>,
}

pub fn prepare_run(
    dataset: &Dataset,
    plan: &SplitPlan,
    mode: RunMode,
    baseline: BaselineViews,
    pre: &Preprocess,
) -> Result<RunData> {
    let split = make_cross_view_split(dataset, plan)?;
    let prepared: Vec<PreparedSample> = split.train.iter().map(|s| pre.sample(s)).collect::<Result<_>>()?;
    let val = split.val.iter().map(|c| pre.clip(c)).collect::<Result<_>>()?;
    let val_train_views = split.val_train_views.iter().map(|s| pre.sample(s)).collect::<Result<_>>()?;
    let (train, baseline_view) = match (mode, baseline) {
        (RunMode::MultiViewDistilled, _) => (prepared, None),
        (RunMode::SingleViewBaseline, BaselineViews::Closest) => {
            let v = closest_view(&plan.train_views, plan.test_view)
                .ok_or_else(|| invalid!("plan has no training views"))?;
            let keep = BTreeSet::from([v]);
            let train = prepared
                .into_iter()
                .map(|s| PreparedSample {
                    label: s.label,
                    views: s.views.into_iter().filter(|(k, _)| keep.contains(k)).collect(),
                })
                .collect();
            (train, Some(v))
        }
        (RunMode::SingleViewBaseline, BaselineViews::Pooled) => {
            (prepared.iter().flat_map(|s| s.split_views()).collect(), None)
        }
    };
    Ok(RunData { train, val, val_train_views, baseline_view })
}

#[derive(Debug, Clone)]
pub struct TeacherScores {
    /// On the training samples.
    pub train: TeacherAccuracy,
    /// On the validation actors' training-view samples.
    pub val: TeacherAccuracy,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub spec: RunSpec,
    /// Final student accuracy on the held-out view.
    pub accuracy: f64,
    pub teacher: Option<TeacherScores>,
    pub baseline_view: Option<u32>,
    pub best_epoch: usize,
    pub student: Vec<f32>,
    pub teacher_params: Option<Vec<f32>>,
}

/// Trains and scores one run.
pub fn execute_run<E: Executor, S: TrainSink>(
    dataset: &Dataset,
    settings: &RunSettings,
    k_folds: usize,
    fold_seed: u64,
    spec: RunSpec,
    exec: &E,
    sink: &mut S,
) -> Result<RunResult> {
    settings.validate()?;
    let folds = stratified_actor_folds(dataset.actors(), k_folds, fold_seed)?;
    let plan = SplitPlan::new(dataset.view_ids(), spec.test_view, &folds, spec.fold)?;
    let data = prepare_run(dataset, &plan, spec.mode, settings.baseline_views, &settings.preprocess)?;
    let model = settings.model()?;
    let networks = match spec.mode {
        RunMode::MultiViewDistilled => Networks::Both,
        RunMode::SingleViewBaseline => Networks::StudentOnly,
    };
    let outcome = train(&model, networks, &settings.train, &data.train, &data.val, exec, sink)?;
    let accuracy = evaluate_accuracy(&model.backbone, &outcome.weights.student, &data.val, exec)?.overall;
    let teacher = match &outcome.weights.teacher {
        Some(tp) => Some(TeacherScores {
            train: evaluate_teacher(&model.backbone, tp, &data.train, exec)?,
            val: evaluate_teacher(&model.backbone, tp, &data.val_train_views, exec)?,
        }),
        None => None,
    };
    Ok(RunResult {
        spec,
        accuracy,
        teacher,
        baseline_view: data.baseline_view,
        best_epoch: outcome.best_epoch,
        student: outcome.weights.student,
        teacher_params: outcome.weights.teacher,
    })
}

/// Mean and sample standard deviation (`n - 1`); the deviation of a single
/// value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub view: u32,
    pub mode: RunMode,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

/// Groups `(test view, mode, accuracy)` rows and reduces each group.
pub fn aggregate(rows: &[(u32, RunMode, f64)]) -> Vec<Summary> {
    let mut groups: BTreeMap<(u32, RunMode), Vec<f64>> = BTreeMap::new();
    for &(v, m, a) in rows {
        groups.entry((v, m)).or_default().push(a);
    }
    groups
        .into_iter()
        .map(|((view, mode), accs)| {
            let (mean, std) = mean_std(&accs);
            Summary { view, mode, mean, std, runs: accs.len() }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_dataset, SynthConfig};

    fn synth(views: usize) -> Dataset {
        let cfg = SynthConfig {
            n_views: views,
            frames: 2,
            height: 8,
            width: 8,
            clips_per_actor_per_class: 1,
            ..Default::default()
        };
        generate_synthetic_dataset(&cfg).unwrap()
    }

    #[test]
    fn run_counts() {
        assert_eq!(plan_runs(&synth(3), 5, &RunMode::ALL, None).unwrap().len(), 30);
        assert_eq!(plan_runs(&synth(2), 5, &RunMode::ALL, None).unwrap().len(), 20);
        assert!(plan_runs(&synth(3), 11, &RunMode::ALL, None).is_err());
        assert!(plan_runs(&synth(3), 5, &RunMode::ALL, Some(&[4])).is_err());
    }

    #[test]
    fn closest_view_prefers_lower_id_on_ties() {
        let views = BTreeSet::from([1, 3]);
        assert_eq!(closest_view(&views, 2), Some(1));
        assert_eq!(closest_view(&BTreeSet::from([2, 3]), 1), Some(2));
        assert_eq!(closest_view(&BTreeSet::from([1, 2]), 3), Some(2));
    }

    #[test]
    fn baseline_data() {
        let d = synth(3);
        let folds = stratified_actor_folds(d.actors(), 5, 0).unwrap();
        let plan = SplitPlan::new(d.view_ids(), 2, &folds, 0).unwrap();
        let pre = Preprocess { frames: 2, ..Default::default() };
        let closest = prepare_run(&d, &plan, RunMode::SingleViewBaseline, BaselineViews::Closest, &pre).unwrap();
        assert_eq!(closest.baseline_view, Some(1));
        assert!(closest.train.iter().all(|s| s.views.keys().eq([1].iter())));
        let pooled = prepare_run(&d, &plan, RunMode::SingleViewBaseline, BaselineViews::Pooled, &pre).unwrap();
        assert_eq!(pooled.train.len(), 2 * closest.train.len());
        let distilled = prepare_run(&d, &plan, RunMode::MultiViewDistilled, BaselineViews::Closest, &pre).unwrap();
        assert!(distilled.train.iter().all(|s| s.views.keys().eq([1, 3].iter())));
        assert!(distilled.val.iter().all(|c| c.view_id == 2));
    }

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[0.5, 0.7, 0.9, 0.6, 0.8]);
        assert!((m - 0.7).abs() < 1e-12);
        assert!((s - 0.025f64.sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[0.4]), (0.4, 0.0));
    }

    #[test]
    fn aggregation_groups_by_view_and_mode() {
        let rows = [
            (1, RunMode::MultiViewDistilled, 0.5),
            (1, RunMode::MultiViewDistilled, 0.7),
            (1, RunMode::SingleViewBaseline, 0.4),
            (2, RunMode::MultiViewDistilled, 1.0),
        ];
        let s = aggregate(&rows);
        assert_eq!(s.len(), 3);
        assert_eq!((s[0].view, s[0].mode, s[0].runs), (1, RunMode::MultiViewDistilled, 2));
        assert!((s[0].mean - 0.6).abs() < 1e-12);
        assert_eq!(RunMode::parse("single_view_baseline").unwrap(), RunMode::SingleViewBaseline);
        assert!(RunMode::parse("other").is_err());
    }
}
