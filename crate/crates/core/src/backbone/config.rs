use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::config_err;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    /// Number of blocks; must be even (regular and shifted blocks alternate).
    pub depth: usize,
    pub heads: usize,
}

/// Hyperparameters of the hierarchical shifted-window video transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    /// Input geometry `(frames, height, width)` after pre-processing.
    pub input: [usize; 3],
    /// `(p_t, p_h, p_w)`; non-overlapping 3D patches.
    pub patch_size: [usize; 3],
    pub embed_dim: usize,
    pub stages: Vec<StageConfig>,
    /// `(w_t, w_h, w_w)`, shared by all stages.
    pub window: [usize; 3],
    pub mlp_ratio: f64,
    pub n_classes: usize,
    #[serde(default)]
    pub drop_path: f64,
    #[serde(default)]
    pub dropout: f64,
}

impl Default for BackboneConfig {
    /// The toy configuration used throughout: 8×32×32 input, patch (2,4,4),
    /// C = 24, two stages of depth 2 with 3 and 6 heads, window (2,4,4).
    fn default() -> Self {
        Self {
            input: [8, 32, 32],
            patch_size: [2, 4, 4],
            embed_dim: 24,
            stages: alloc::vec![StageConfig { depth: 2, heads: 3 }, StageConfig { depth: 2, heads: 6 }],
            window: [2, 4, 4],
            mlp_ratio: 4.0,
            n_classes: 4,
            drop_path: 0.0,
            dropout: 0.0,
        }
    }
}

impl BackboneConfig {
    /// Cyclic shift used by the shifted blocks: half a window per axis.
    pub fn shift(&self) -> [usize; 3] {
        [self.window[0] / 2, self.window[1] / 2, self.window[2] / 2]
    }

    /// Token grid after patch embedding.
    pub fn patch_grid(&self) -> [usize; 3] {
        [self.input[0] / self.patch_size[0], self.input[1] / self.patch_size[1], self.input[2] / self.patch_size[2]]
    }

    /// Token grid at the input of each stage.
    pub fn stage_grids(&self) -> Vec<[usize; 3]> {
        let mut g = self.patch_grid();
        let mut out = Vec::with_capacity(self.stages.len());
        for _ in &self.stages {
            out.push(g);
            g = [g[0], g[1] / 2, g[2] / 2];
        }
        out
    }

    /// Channel width of each stage: `2^s · C`.
    pub fn stage_dims(&self) -> Vec<usize> {
        (0..self.stages.len()).map(|s| self.embed_dim << s).collect()
    }

    pub fn feature_dim(&self) -> usize {
        self.embed_dim << (self.stages.len().saturating_sub(1))
    }

    pub fn mlp_hidden(&self, dim: usize) -> usize {
        libm::round(self.mlp_ratio * dim as f64).max(1.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let axes = ["temporal", "height", "width"];
        for a in 0..3 {
            if self.input[a] == 0 || self.patch_size[a] == 0 || self.window[a] == 0 {
                return Err(config_err!("{} input, patch and window sizes must be positive", axes[a]));
            }
            if !self.input[a].is_multiple_of(self.patch_size[a]) {
                return Err(config_err!(
                    "{} input size {} is not divisible by patch size {}",
                    axes[a],
                    self.input[a],
                    self.patch_size[a]
                ));
            }
        }
        if self.embed_dim == 0 {
            return Err(config_err!("embed_dim must be positive"));
        }
        if self.stages.is_empty() {
            return Err(config_err!("at least one stage is required"));
        }
        if self.n_classes == 0 {
            return Err(config_err!("n_classes must be positive"));
        }
        if !(self.mlp_ratio.is_finite() && self.mlp_ratio > 0.0) {
            return Err(config_err!("mlp_ratio must be positive"));
        }
        for (name, rate) in [("drop_path", self.drop_path), ("dropout", self.dropout)] {
            if !(0.0..1.0).contains(&rate) {
                return Err(config_err!("{name} rate {rate} is outside [0, 1)"));
            }
        }

        let grids = self.stage_grids();
        let dims = self.stage_dims();
        for (s, stage) in self.stages.iter().enumerate() {
            if s > 0 {
                let prev = grids[s - 1];
                if !prev[1].is_multiple_of(2) || !prev[2].is_multiple_of(2) {
                    return Err(config_err!(
                        "stage {} grid {:?} has odd spatial dims; cannot merge patches",
                        s - 1,
                        prev
                    ));
                }
            }
            if stage.depth == 0 || stage.depth % 2 != 0 {
                return Err(config_err!("stage {s} depth {} must be even and positive", stage.depth));
            }
            if stage.heads == 0 || !dims[s].is_multiple_of(stage.heads) {
                return Err(config_err!("stage {s} width {} is not divisible by {} heads", dims[s], stage.heads));
            }
            let g = grids[s];
            for a in 0..3 {
                if g[a] == 0 || !g[a].is_multiple_of(self.window[a]) {
                    return Err(config_err!(
                        "stage {s} {} grid size {} is not divisible by window {}",
                        axes[a],
                        g[a],
                        self.window[a]
                    ));
                }
            }
        }
        Ok(())
    }
}
