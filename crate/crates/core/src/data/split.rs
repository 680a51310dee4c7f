//! Actor-based k-fold planning and the leave-one-view-out split.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, MultiViewSample, VideoClip};
use crate::error::invalid;
use crate::{rng, Result};

/// One train/validation partition of the actor set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train_actors: BTreeSet<u32>,
    pub val_actors: BTreeSet<u32>,
}

/// Partitions actors into `k_folds` validation groups.
///
/// Actors are sorted by id, shuffled with `seed`, then dealt round-robin, so
/// fold sizes differ by at most one and the result does not depend on the
/// order the actors were supplied in. When every actor performs every class
/// (as in all balanced multi-view datasets) each validation group therefore
/// contains every class.
pub fn stratified_actor_folds(actors: &BTreeSet<u32>, k_folds: usize, seed: u64) -> Result<Vec<Fold>> {
    if k_folds == 0 {
        return Err(invalid!("k_folds must be at least 1"));
    }
    if k_folds > actors.len() {
        return Err(invalid!("k_folds = {k_folds} exceeds the {} available actors", actors.len()));
    }
    let mut order: Vec<u32> = actors.iter().copied().collect();
    order.shuffle(&mut rng::seeded(seed));

    let mut val_sets = alloc::vec![BTreeSet::new(); k_folds];
    for (i, actor) in order.into_iter().enumerate() {
        val_sets[i % k_folds].insert(actor);
    }
    Ok(val_sets
        .into_iter()
        .map(|val_actors| Fold { train_actors: actors.difference(&val_actors).copied().collect(), val_actors })
        .collect())
}

/// A held-out test view combined with one actor fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub test_view: u32,
    pub fold_index: usize,
    pub k_folds: usize,
    pub train_actors: BTreeSet<u32>,
    pub val_actors: BTreeSet<u32>,
    pub train_views: BTreeSet<u32>,
}

impl SplitPlan {
    pub fn new(view_ids: &[u32], test_view: u32, folds: &[Fold], fold_index: usize) -> Result<Self> {
        if !view_ids.contains(&test_view) {
            return Err(invalid!("test view {test_view} is not one of {view_ids:?}"));
        }
        let fold = folds
            .get(fold_index)
            .ok_or_else(|| invalid!("fold index {fold_index} out of range for {} folds", folds.len()))?;
        let plan = Self {
            test_view,
            fold_index,
            k_folds: folds.len(),
            train_actors: fold.train_actors.clone(),
            val_actors: fold.val_actors.clone(),
            train_views: view_ids.iter().copied().filter(|&v| v != test_view).collect(),
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fold_index >= self.k_folds {
            return Err(invalid!("fold index {} out of range for {} folds", self.fold_index, self.k_folds));
        }
        if self.train_views.contains(&self.test_view) {
            return Err(invalid!("test view {} is also a training view", self.test_view));
        }
        if let Some(a) = self.train_actors.intersection(&self.val_actors).next() {
            return Err(invalid!("actor {a} is in both the train and validation sets"));
        }
        if self.train_views.is_empty() {
            return Err(invalid!("a split needs at least one training view"));
        }
        Ok(())
    }
}

/// Every (test view, fold) plan for a dataset, test view outermost.
pub fn all_split_plans(dataset: &Dataset, k_folds: usize, seed: u64) -> Result<Vec<SplitPlan>> {
    let folds = stratified_actor_folds(dataset.actors(), k_folds, seed)?;
    let mut plans = Vec::with_capacity(dataset.view_ids().len() * k_folds);
    for &view in dataset.view_ids() {
        for fold in 0..k_folds {
            plans.push(SplitPlan::new(dataset.view_ids(), view, &folds, fold)?);
        }
    }
    Ok(plans)
}

/// Output of [`make_cross_view_split`].
#[derive(Debug, Clone, PartialEq)]
pub struct CrossViewSplit {
    /// Training actors' samples restricted to the training views.
    pub train: Vec<MultiViewSample>,
    /// Validation actors' clips from the held-out view.
    pub val: Vec<VideoClip>,
    /// Validation actors' samples restricted to the training views, used to
    /// score the multi-view teacher on unseen actors.
    pub val_train_views: Vec<MultiViewSample>,
}

pub fn make_cross_view_split(dataset: &Dataset, plan: &SplitPlan) -> Result<CrossViewSplit> {
    plan.validate()?;
    let views: BTreeSet<u32> = dataset.view_ids().iter().copied().collect();
    if !views.contains(&plan.test_view) {
        return Err(invalid!("plan test view {} is not in the dataset", plan.test_view));
    }
    if let Some(v) = plan.train_views.difference(&views).next() {
        return Err(invalid!("plan training view {v} is not in the dataset"));
    }
    let actors = dataset.actors();
    if let Some(a) = plan.train_actors.union(&plan.val_actors).find(|a| !actors.contains(a)) {
        return Err(invalid!("plan references unknown actor {a}"));
    }

    let mut split = CrossViewSplit { train: Vec::new(), val: Vec::new(), val_train_views: Vec::new() };
    for sample in dataset.samples() {
        if plan.train_actors.contains(&sample.actor_id) {
            split.train.push(sample.restricted_to(&plan.train_views));
        } else if plan.val_actors.contains(&sample.actor_id) {
            split.val.push(sample.clips[&plan.test_view].clone());
            split.val_train_views.push(sample.restricted_to(&plan.train_views));
        }
    }
    Ok(split)
}
