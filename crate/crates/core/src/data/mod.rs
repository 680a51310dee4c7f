//! Clips, multi-view samples, datasets and everything that prepares them for
//! the network.

mod preprocess;
mod split;
mod synth;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::error::invalid;
use crate::Result;

pub use preprocess::{
    denormalize_frames, normalize_frames, sample_frames, sample_indices, Normalization, PreparedClip, PreparedSample,
    Preprocess,
};
pub use split::{all_split_plans, make_cross_view_split, stratified_actor_folds, CrossViewSplit, Fold, SplitPlan};
pub use synth::{generate_synthetic_dataset, SynthConfig};

/// Colour channels per pixel. Clips are always RGB.
pub const CHANNELS: usize = 3;

/// A dense `len × height × width × 3` frame stack in row-major
/// (frame, row, col, channel) order.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    pub len: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Frames {
    pub fn new(len: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if len == 0 || height == 0 || width == 0 {
            return Err(invalid!("frame stack dims must be positive, got {len}x{height}x{width}"));
        }
        let expected = len * height * width * CHANNELS;
        if data.len() != expected {
            return Err(invalid!("frame data has {} values, {len}x{height}x{width}x3 needs {expected}", data.len()));
        }
        Ok(Self { len, height, width, data })
    }

    pub fn zeros(len: usize, height: usize, width: usize) -> Self {
        Self { len, height, width, data: alloc::vec![0.0; len * height * width * CHANNELS] }
    }

    pub fn frame_size(&self) -> usize {
        self.height * self.width * CHANNELS
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let n = self.frame_size();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.len, self.height, self.width, CHANNELS]
    }
}

/// One RGB frame sequence from one camera view of one actor performing one
/// action.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub frames: Frames,
    pub view_id: u32,
    pub actor_id: u32,
    pub label: usize,
}

impl VideoClip {
    pub fn new(frames: Frames, view_id: u32, actor_id: u32, label: usize) -> Result<Self> {
        if view_id == 0 {
            return Err(invalid!("view ids start at 1"));
        }
        if let Some(bad) = frames.data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(invalid!("clip pixel value {bad} outside [0, 1]"));
        }
        Ok(Self { frames, view_id, actor_id, label })
    }
}

/// The per-view clips of one action instance plus its shared label.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewSample {
    pub label: usize,
    pub actor_id: u32,
    pub clips: BTreeMap<u32, VideoClip>,
}

impl MultiViewSample {
    pub fn new(label: usize, actor_id: u32, clips: BTreeMap<u32, VideoClip>) -> Result<Self> {
        if clips.is_empty() {
            return Err(invalid!("a multi-view sample needs at least one clip"));
        }
        for (&view, clip) in &clips {
            if clip.view_id != view {
                return Err(invalid!("clip keyed under view {view} carries view_id {}", clip.view_id));
            }
            if clip.label != label || clip.actor_id != actor_id {
                return Err(invalid!(
                    "view {view} clip has label {} / actor {}, sample has {label} / {actor_id}",
                    clip.label,
                    clip.actor_id
                ));
            }
        }
        Ok(Self { label, actor_id, clips })
    }

    pub fn views(&self) -> impl Iterator<Item = u32> + '_ {
        self.clips.keys().copied()
    }

    /// Copy of this sample holding only the listed views.
    pub fn restricted_to(&self, views: &BTreeSet<u32>) -> Self {
        let clips = self.clips.iter().filter(|(v, _)| views.contains(v)).map(|(&v, c)| (v, c.clone())).collect();
        Self { label: self.label, actor_id: self.actor_id, clips }
    }
}

/// An immutable collection of multi-view samples over a fixed view set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<MultiViewSample>,
    view_ids: Vec<u32>,
    n_classes: usize,
    actors: BTreeSet<u32>,
}

impl Dataset {
    pub fn new(samples: Vec<MultiViewSample>, view_ids: Vec<u32>, n_classes: usize) -> Result<Self> {
        if n_classes == 0 {
            return Err(invalid!("n_classes must be at least 1"));
        }
        let view_set: BTreeSet<u32> = view_ids.iter().copied().collect();
        if view_set.len() != view_ids.len() || view_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid!("view ids must be strictly increasing, got {view_ids:?}"));
        }
        if view_ids.first() == Some(&0) {
            return Err(invalid!("view ids start at 1"));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.label >= n_classes {
                return Err(invalid!("sample {i} has label {} but n_classes is {n_classes}", s.label));
            }
            if !s.clips.keys().copied().eq(view_ids.iter().copied()) {
                return Err(invalid!(
                    "sample {i} covers views {:?}, dataset views are {view_ids:?}",
                    s.clips.keys().collect::<Vec<_>>()
                ));
            }
        }
        let actors = samples.iter().map(|s| s.actor_id).collect();
        Ok(Self { samples, view_ids, n_classes, actors })
    }

    pub fn samples(&self) -> &[MultiViewSample] {
        &self.samples
    }

    pub fn view_ids(&self) -> &[u32] {
        &self.view_ids
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn actors(&self) -> &BTreeSet<u32> {
        &self.actors
    }

    pub fn clip_count(&self) -> usize {
        self.samples.len() * self.view_ids.len()
    }
}
