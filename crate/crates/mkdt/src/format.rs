//! On-disk datasets: one binary file per clip plus a JSON manifest.
//!
//! A clip file is the magic `MVK1`, then `L`, `H`, `W`, `C = 3` as
//! little-endian `u32`, then `L·H·W·C` little-endian `f32` values in
//! (frame, row, col, channel) order. `manifest.json` at the dataset root lists
//! every sample with its label, actor and per-view clip paths relative to the
//! root.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mkdt_core::data::{Dataset, Frames, MultiViewSample, VideoClip, CHANNELS};
use serde::{Deserialize, Serialize};

use crate::error::{format_err, io, json, Result};

pub const CLIP_MAGIC: &[u8; 4] = b"MVK1";
pub const MANIFEST: &str = "manifest.json";
const HEADER_LEN: usize = 4 + 4 * 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub n_classes: usize,
    pub view_ids: Vec<u32>,
    pub samples: Vec<ManifestSample>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSample {
    pub label: usize,
    pub actor: u32,
    /// View id (as a string key) to clip path relative to the dataset root.
    pub clips: BTreeMap<String, String>,
}

pub fn encode_clip(frames: &Frames) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * frames.data.len());
    out.extend_from_slice(CLIP_MAGIC);
    for d in frames.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &frames.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses clip bytes; `path` only labels errors.
pub fn decode_clip(bytes: &[u8], path: &Path) -> Result<Frames> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(path, format!("truncated clip header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != CLIP_MAGIC {
        return Err(format_err(path, format!("bad magic {:?}, expected \"MVK1\"", &bytes[..4])));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (len, height, width, channels) = (dim(0), dim(1), dim(2), dim(3));
    if channels != CHANNELS {
        return Err(format_err(path, format!("clip has {channels} channels, expected {CHANNELS}")));
    }
    let count = len
        .checked_mul(height)
        .and_then(|n| n.checked_mul(width))
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| format_err(path, "clip dimensions overflow"))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * count {
        return Err(format_err(
            path,
            format!("{len}x{height}x{width}x{channels} clip needs {} data bytes, file has {}", 4 * count, body.len()),
        ));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Frames::new(len, height, width, data).map_err(|e| format_err(path, e.to_string()))
}

pub fn write_clip(path: &Path, frames: &Frames) -> Result<()> {
    fs::write(path, encode_clip(frames)).map_err(io(path))
}

pub fn read_clip(path: &Path) -> Result<Frames> {
    decode_clip(&fs::read(path).map_err(io(path))?, path)
}

fn clip_path(sample: usize, view: u32) -> String {
    format!("clips/{sample:05}_view{view}.mvk")
}

/// Writes every clip and the manifest under `root`; returns the manifest path.
pub fn write_dataset(root: &Path, dataset: &Dataset) -> Result<PathBuf> {
    let clips = root.join("clips");
    fs::create_dir_all(&clips).map_err(io(&clips))?;
    let mut samples = Vec::with_capacity(dataset.samples().len());
    for (i, s) in dataset.samples().iter().enumerate() {
        let mut paths = BTreeMap::new();
        for (&view, clip) in &s.clips {
            let rel = clip_path(i, view);
            write_clip(&root.join(&rel), &clip.frames)?;
            paths.insert(view.to_string(), rel);
        }
        samples.push(ManifestSample { label: s.label, actor: s.actor_id, clips: paths });
    }
    let manifest = Manifest { n_classes: dataset.n_classes(), view_ids: dataset.view_ids().to_vec(), samples };
    let path = root.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(json(&path))?;
    fs::write(&path, text + "\n").map_err(io(&path))?;
    Ok(path)
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    serde_json::from_str(&text).map_err(json(&path))
}

pub fn read_dataset(root: &Path) -> Result<Dataset> {
    let manifest = read_manifest(root)?;
    let manifest_path = root.join(MANIFEST);
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for (i, s) in manifest.samples.iter().enumerate() {
        let mut clips = BTreeMap::new();
        for (key, rel) in &s.clips {
            let view: u32 = key
                .parse()
                .map_err(|_| format_err(&manifest_path, format!("sample {i}: view key {key:?} is not an integer")))?;
            if !manifest.view_ids.contains(&view) {
                return Err(format_err(&manifest_path, format!("sample {i}: view {view} is not listed in view_ids")));
            }
            let path = root.join(rel);
            let frames = read_clip(&path)?;
            let clip = VideoClip::new(frames, view, s.actor, s.label).map_err(|e| format_err(&path, e.to_string()))?;
            clips.insert(view, clip);
        }
        let sample = MultiViewSample::new(s.label, s.actor, clips)
            .map_err(|e| format_err(&manifest_path, format!("sample {i}: {e}")))?;
        samples.push(sample);
    }
    Dataset::new(samples, manifest.view_ids, manifest.n_classes).map_err(|e| format_err(&manifest_path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let f = Frames::zeros(8, 32, 32);
        let bytes = encode_clip(&f);
        assert_eq!(&bytes[..4], b"MVK1");
        let dims: Vec<u32> = bytes[4..20].chunks(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        assert_eq!(dims, [8, 32, 32, 3]);
        assert_eq!(bytes.len(), 20 + 8 * 32 * 32 * 3 * 4);
    }

    #[test]
    fn decode_inverts_encode() {
        let data: Vec<f32> = (0..2 * 2 * 3 * 3).map(|i| i as f32 / 64.0).collect();
        let f = Frames::new(2, 2, 3, data).unwrap();
        assert_eq!(decode_clip(&encode_clip(&f), Path::new("x")).unwrap(), f);
    }

    #[test]
    fn corrupt_clips_name_the_file() {
        let p = Path::new("bad.mvk");
        let good = encode_clip(&Frames::zeros(1, 2, 2));
        let mut magic = good.clone();
        magic[0] = b'X';
        let mut channels = good.clone();
        channels[16] = 4;
        for bytes in [&good[..10], &good[..good.len() - 1], &magic[..], &channels[..]] {
            let err = decode_clip(bytes, p).unwrap_err().to_string();
            assert!(err.starts_with("bad.mvk: "), "{err}");
        }
    }
}
