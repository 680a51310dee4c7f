//! Model checkpoints.
//!
//! Layout: the magic `MKDTCKP1`, a little-endian `u32` header length, the JSON
//! header, then every tensor listed in the header as little-endian `f32`
//! values in row-major order. Tensors are the backbone parameters prefixed by
//! `teacher.` or `student.`.

use std::fs;
use std::path::Path;

use mkdt_core::backbone::{Backbone, BackboneConfig};
use serde::{Deserialize, Serialize};

use crate::error::{format_err, io, json, Result};

pub const MAGIC: &[u8; 8] = b"MKDTCKP1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    n_classes: usize,
    view_ids: Vec<u32>,
    backbone: BackboneConfig,
    epoch: usize,
    tensors: Vec<TensorInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub n_classes: usize,
    pub view_ids: Vec<u32>,
    pub backbone: BackboneConfig,
    pub epoch: usize,
    pub teacher: Option<Vec<f32>>,
    pub student: Vec<f32>,
}

fn tensors<'a>(backbone: &'a Backbone, prefix: &str) -> impl Iterator<Item = TensorInfo> + 'a {
    let prefix = prefix.to_string();
    backbone
        .layout()
        .entries()
        .iter()
        .map(move |e| TensorInfo { name: format!("{prefix}.{}", e.name), shape: e.shape.clone() })
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let backbone = Backbone::new(self.backbone.clone())?;
        let n = backbone.param_count();
        let mut names: Vec<TensorInfo> = Vec::new();
        let mut values: Vec<&[f32]> = Vec::new();
        if let Some(t) = &self.teacher {
            names.extend(tensors(&backbone, "teacher"));
            values.push(t);
        }
        names.extend(tensors(&backbone, "student"));
        values.push(&self.student);
        if values.iter().any(|v| v.len() != n) {
            return Err(crate::Error::Config(format!("checkpoint parameter vectors must hold {n} values")));
        }
        let header = Header {
            n_classes: self.n_classes,
            view_ids: self.view_ids.clone(),
            backbone: self.backbone.clone(),
            epoch: self.epoch,
            tensors: names,
        };
        let header = serde_json::to_vec(&header).expect("checkpoint header serializes");
        let mut out = Vec::with_capacity(12 + header.len() + 4 * n * values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in values.iter().flat_map(|v| v.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    /// Parses checkpoint bytes; `path` only labels errors.
    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(format_err(path, "not a checkpoint (bad magic)"));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header_bytes = bytes.get(12..12 + len).ok_or_else(|| format_err(path, "truncated checkpoint header"))?;
        let header: Header = serde_json::from_slice(header_bytes).map_err(json(path))?;
        let backbone = Backbone::new(header.backbone.clone()).map_err(|e| format_err(path, e.to_string()))?;
        let with_teacher = header.tensors.first().is_some_and(|t| t.name.starts_with("teacher."));
        let mut expected: Vec<TensorInfo> = Vec::new();
        if with_teacher {
            expected.extend(tensors(&backbone, "teacher"));
        }
        expected.extend(tensors(&backbone, "student"));
        if header.tensors != expected {
            return Err(format_err(path, "tensor list does not match the backbone configuration"));
        }
        let body = &bytes[12 + len..];
        let n = backbone.param_count();
        let nets = if with_teacher { 2 } else { 1 };
        if body.len() != 4 * n * nets {
            return Err(format_err(path, format!("expected {} tensor bytes, found {}", 4 * n * nets, body.len())));
        }
        let mut values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let teacher = with_teacher.then(|| values.by_ref().take(n).collect());
        let student = values.collect();
        Ok(Self {
            n_classes: header.n_classes,
            view_ids: header.view_ids,
            backbone: header.backbone,
            epoch: header.epoch,
            teacher,
            student,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?).map_err(io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path).map_err(io(path))?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mkdt_core::backbone::StageConfig;

    fn tiny() -> BackboneConfig {
        BackboneConfig {
            input: [2, 8, 8],
            patch_size: [1, 4, 4],
            embed_dim: 4,
            stages: vec![StageConfig { depth: 2, heads: 1 }],
            window: [2, 2, 2],
            mlp_ratio: 1.0,
            n_classes: 2,
            drop_path: 0.0,
            dropout: 0.0,
        }
    }

    fn checkpoint(teacher: bool) -> Checkpoint {
        let b = Backbone::new(tiny()).unwrap();
        Checkpoint {
            n_classes: 2,
            view_ids: vec![1, 2],
            backbone: tiny(),
            epoch: 3,
            teacher: teacher.then(|| b.init_params(1)),
            student: b.init_params(2),
        }
    }

    #[test]
    fn round_trip_with_and_without_teacher() {
        for teacher in [true, false] {
            let c = checkpoint(teacher);
            let bytes = c.encode().unwrap();
            assert_eq!(Checkpoint::decode(&bytes, Path::new("c")).unwrap(), c);
        }
    }

    #[test]
    fn damaged_files_are_rejected() {
        let bytes = checkpoint(true).encode().unwrap();
        let p = Path::new("model.ckpt");
        for bad in [&bytes[..5], &bytes[..bytes.len() - 4], &bytes[1..]] {
            assert!(Checkpoint::decode(bad, p).unwrap_err().to_string().contains("model.ckpt"));
        }
        let mut wrong = checkpoint(false);
        wrong.student.pop();
        assert!(wrong.encode().is_err());
    }
}
