use alloc::format;
use alloc::vec::Vec;

use super::attention::register_bias_table;
use super::block::{BlockCache, BlockSpec, SwinBlock};
use super::config::BackboneConfig;
use super::embed::{EmbedCache, PatchEmbed};
use super::grid::tokens;
use super::layers::{LayerNorm, LayerNormCache, Linear};
use super::merge::{MergeCache, PatchMerging};
use super::params::ParamLayout;
use crate::data::Frames;
use crate::error::invalid;
use crate::{Real, Result};

#[derive(Debug, Clone)]
struct Stage {
    blocks: Vec<SwinBlock>,
    merge: Option<PatchMerging>,
}

/// Patch embedding, stages of alternating regular/shifted window blocks with
/// patch merging in between, a final norm, global average pooling and a
/// linear classification head.
#[derive(Debug, Clone)]
pub struct Backbone {
    config: BackboneConfig,
    layout: ParamLayout,
    embed: PatchEmbed,
    stages: Vec<Stage>,
    norm: LayerNorm,
    head: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneOutput<T> {
    /// Pooled feature vector, length `feature_dim`.
    pub feature: Vec<T>,
    pub logits: Vec<T>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    embed: EmbedCache<T>,
    blocks: Vec<Vec<BlockCache<T>>>,
    merges: Vec<Option<MergeCache<T>>>,
    norm: LayerNormCache<T>,
    feature: Vec<T>,
    tokens: usize,
}

impl<T> Tape<T> {
    pub fn block(&self, stage: usize, block: usize) -> &BlockCache<T> {
        &self.blocks[stage][block]
    }
}

impl Backbone {
    pub fn new(config: BackboneConfig) -> Result<Self> {
        config.validate()?;
        let mut layout = ParamLayout::default();
        let embed = PatchEmbed::new(&mut layout, "embed", config.input, config.patch_size, config.embed_dim);
        let grids = config.stage_grids();
        let dims = config.stage_dims();
        let shift = config.shift();
        let mut stages = Vec::with_capacity(config.stages.len());
        for (s, sc) in config.stages.iter().enumerate() {
            let table = register_bias_table(&mut layout, &format!("stages.{s}"), config.window, sc.heads);
            let blocks = (0..sc.depth)
                .map(|b| {
                    let spec = BlockSpec {
                        dim: dims[s],
                        heads: sc.heads,
                        hidden: config.mlp_hidden(dims[s]),
                        dims: grids[s],
                        window: config.window,
                        shift: if b % 2 == 1 { shift } else { [0; 3] },
                        bias_table: table,
                        drop_path: config.drop_path,
                        dropout: config.dropout,
                    };
                    SwinBlock::new(&mut layout, &format!("stages.{s}.blocks.{b}"), spec)
                })
                .collect();
            let merge = (s + 1 < config.stages.len())
                .then(|| PatchMerging::new(&mut layout, &format!("stages.{s}.merge"), grids[s], dims[s]));
            stages.push(Stage { blocks, merge });
        }
        let f = config.feature_dim();
        let norm = LayerNorm::new(&mut layout, "norm", f);
        let head = Linear::new(&mut layout, "head", f, config.n_classes, true);
        Ok(Self { config, layout, embed, stages, norm, head })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.len()
    }

    pub fn init_params<T: Real>(&self, seed: u64) -> Vec<T> {
        self.layout.init(seed)
    }

    /// Number of input values: `frames × height × width × 3`.
    pub fn input_len(&self) -> usize {
        tokens(self.config.input) * crate::data::CHANNELS
    }

    /// Converts a clip into the scalar type, checking its geometry.
    pub fn input_from<T: Real>(&self, frames: &Frames) -> Result<Vec<T>> {
        let [t, h, w] = self.config.input;
        if [frames.len, frames.height, frames.width] != [t, h, w] {
            return Err(invalid!(
                "clip is {}x{}x{}, the backbone expects {t}x{h}x{w}",
                frames.len,
                frames.height,
                frames.width
            ));
        }
        Ok(frames.data.iter().map(|&v| T::from_f32(v)).collect())
    }

    pub fn forward<T: Real>(&self, params: &[T], input: &[T]) -> BackboneOutput<T> {
        self.forward_train(params, input, None).0
    }

    /// Forward pass keeping the tape. `dropout_seed` enables dropout and
    /// stochastic depth (when their rates are non-zero).
    pub fn forward_train<T: Real>(
        &self,
        params: &[T],
        input: &[T],
        dropout_seed: Option<u64>,
    ) -> (BackboneOutput<T>, Tape<T>) {
        assert_eq!(params.len(), self.layout.len(), "parameter vector does not match the layout");
        assert_eq!(input.len(), self.input_len(), "input does not match the backbone geometry");
        let mut rng = dropout_seed.map(crate::rng::seeded);

        let (mut x, embed) = self.embed.forward(params, input);
        let mut blocks = Vec::with_capacity(self.stages.len());
        let mut merges = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let mut caches = Vec::with_capacity(stage.blocks.len());
            for block in &stage.blocks {
                let (y, cache) = block.forward(params, &x, rng.as_mut());
                x = y;
                caches.push(cache);
            }
            blocks.push(caches);
            merges.push(stage.merge.as_ref().map(|m| {
                let (y, cache) = m.forward(params, &x);
                x = y;
                cache
            }));
        }

        let f = self.config.feature_dim();
        let (normed, norm) = self.norm.forward(params, &x);
        let n = normed.len() / f;
        let mut feature = alloc::vec![T::zero(); f];
        for row in normed.chunks_exact(f) {
            for (a, &b) in feature.iter_mut().zip(row) {
                *a += b;
            }
        }
        let inv = T::one() / T::from_usize(n);
        for a in &mut feature {
            *a *= inv;
        }
        let logits = self.head.forward(params, &feature);
        let tape = Tape { embed, blocks, merges, norm, feature: feature.clone(), tokens: n };
        (BackboneOutput { feature, logits }, tape)
    }

    /// Accumulates `dL/dθ` into `grads` given `dL/dlogits`.
    pub fn backward<T: Real>(&self, params: &[T], tape: &Tape<T>, d_logits: &[T], grads: &mut [T]) {
        assert_eq!(grads.len(), self.layout.len(), "gradient vector does not match the layout");
        let dfeature = self.head.backward(params, grads, &tape.feature, d_logits);
        let inv = T::one() / T::from_usize(tape.tokens);
        let dpooled: Vec<T> = dfeature.iter().map(|&d| d * inv).collect();
        let mut dnormed = Vec::with_capacity(dpooled.len() * tape.tokens);
        for _ in 0..tape.tokens {
            dnormed.extend_from_slice(&dpooled);
        }
        let mut dx = self.norm.backward(params, grads, &tape.norm, &dnormed);
        for (s, stage) in self.stages.iter().enumerate().rev() {
            if let (Some(m), Some(cache)) = (&stage.merge, &tape.merges[s]) {
                dx = m.backward(params, grads, cache, &dx);
            }
            for (b, block) in stage.blocks.iter().enumerate().rev() {
                dx = block.backward(params, grads, &tape.blocks[s][b], &dx);
            }
        }
        self.embed.backward(params, grads, &tape.embed, &dx);
    }

    /// Whether block `b` of stage `s` uses shifted windows.
    pub fn is_shifted(&self, s: usize, b: usize) -> bool {
        self.stages[s].blocks[b].is_shifted()
    }
}
