use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Frames, MultiViewSample, VideoClip, CHANNELS};
use crate::error::invalid;
use crate::Result;

/// Frame indices picked by [`sample_frames`]: the centre of each of `count`
/// equal bins over `len` frames, clamped to the last frame.
pub fn sample_indices(len: usize, count: usize) -> Vec<usize> {
    // floor((i + 0.5) * len / count) in exact integer arithmetic
    (0..count).map(|i| ((2 * i + 1) * len / (2 * count)).min(len - 1)).collect()
}

/// Resamples a clip to exactly `count` frames.
pub fn sample_frames(frames: &Frames, count: usize) -> Result<Frames> {
    if count == 0 {
        return Err(invalid!("frame count must be at least 1"));
    }
    if frames.len == 0 || frames.data.is_empty() {
        return Err(invalid!("cannot sample frames from an empty clip"));
    }
    let mut data = Vec::with_capacity(count * frames.frame_size());
    for i in sample_indices(frames.len, count) {
        data.extend_from_slice(frames.frame(i));
    }
    Ok(Frames { len: count, height: frames.height, width: frames.width, data })
}

/// Per-channel affine normalization `(x - mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self { mean: [0.5; 3], std: [0.5; 3] }
    }
}

impl Normalization {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.std.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(invalid!("normalization std must be positive, got {s}"));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(invalid!("normalization mean must be finite"));
        }
        Ok(())
    }
}

pub fn normalize_frames(frames: &Frames, norm: &Normalization) -> Result<Frames> {
    norm.validate()?;
    let mut out = frames.clone();
    for px in out.data.chunks_exact_mut(CHANNELS) {
        for c in 0..CHANNELS {
            px[c] = (px[c] - norm.mean[c]) / norm.std[c];
        }
    }
    Ok(out)
}

pub fn denormalize_frames(frames: &Frames, norm: &Normalization) -> Result<Frames> {
    norm.validate()?;
    let mut out = frames.clone();
    for px in out.data.chunks_exact_mut(CHANNELS) {
        for c in 0..CHANNELS {
            px[c] = px[c] * norm.std[c] + norm.mean[c];
        }
    }
    Ok(out)
}

/// Frame resampling followed by normalization; the network input pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocess {
    pub frames: usize,
    #[serde(default)]
    pub normalization: Normalization,
}

impl Default for Preprocess {
    fn default() -> Self {
        Self { frames: 8, normalization: Normalization::default() }
    }
}

impl Preprocess {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(invalid!("frame count must be at least 1"));
        }
        self.normalization.validate()
    }

    pub fn apply(&self, frames: &Frames) -> Result<Frames> {
        normalize_frames(&sample_frames(frames, self.frames)?, &self.normalization)
    }

    pub fn clip(&self, clip: &VideoClip) -> Result<PreparedClip> {
        Ok(PreparedClip { view_id: clip.view_id, label: clip.label, frames: self.apply(&clip.frames)? })
    }

    pub fn sample(&self, sample: &MultiViewSample) -> Result<PreparedSample> {
        let views = sample.clips.iter().map(|(&v, c)| Ok((v, self.apply(&c.frames)?))).collect::<Result<_>>()?;
        Ok(PreparedSample { label: sample.label, views })
    }
}

/// A clip after [`Preprocess::apply`].
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedClip {
    pub view_id: u32,
    pub label: usize,
    pub frames: Frames,
}

/// A multi-view sample after [`Preprocess::apply`] on every view.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub label: usize,
    pub views: BTreeMap<u32, Frames>,
}

impl PreparedSample {
    /// Splits into one single-view sample per view.
    pub fn split_views(&self) -> impl Iterator<Item = PreparedSample> + '_ {
        self.views.iter().map(|(&v, f)| PreparedSample { label: self.label, views: BTreeMap::from([(v, f.clone())]) })
    }
}
