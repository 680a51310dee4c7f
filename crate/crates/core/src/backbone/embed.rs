use alloc::vec::Vec;

use super::layers::{LayerNorm, LayerNormCache, Linear};
use super::params::ParamLayout;
use crate::data::CHANNELS;
use crate::Real;

/// Non-overlapping 3D patches, linearly projected and layer-normalized.
///
/// Patch vectors are flattened in (dt, dh, dw, channel) order.
#[derive(Debug, Clone)]
pub struct PatchEmbed {
    pub proj: Linear,
    pub norm: LayerNorm,
    pub input: [usize; 3],
    pub patch: [usize; 3],
}

#[derive(Debug, Clone)]
pub struct EmbedCache<T> {
    patches: Vec<T>,
    ln: LayerNormCache<T>,
}

impl PatchEmbed {
    pub fn new(layout: &mut ParamLayout, name: &str, input: [usize; 3], patch: [usize; 3], dim: usize) -> Self {
        let k = patch[0] * patch[1] * patch[2] * CHANNELS;
        let proj = Linear::new(layout, &alloc::format!("{name}.proj"), k, dim, true);
        let norm = LayerNorm::new(layout, &alloc::format!("{name}.norm"), dim);
        Self { proj, norm, input, patch }
    }

    pub fn grid(&self) -> [usize; 3] {
        [self.input[0] / self.patch[0], self.input[1] / self.patch[1], self.input[2] / self.patch[2]]
    }

    /// One row per patch, grid raster order.
    pub fn gather_patches<T: Real>(&self, frames: &[T]) -> Vec<T> {
        let [_, h, w] = self.input;
        let [pt, ph, pw] = self.patch;
        let g = self.grid();
        let mut out = Vec::with_capacity(frames.len());
        for gt in 0..g[0] {
            for gh in 0..g[1] {
                for gw in 0..g[2] {
                    for dt in 0..pt {
                        for dh in 0..ph {
                            let row = ((gt * pt + dt) * h + gh * ph + dh) * w + gw * pw;
                            out.extend_from_slice(&frames[row * CHANNELS..(row + pw) * CHANNELS]);
                        }
                    }
                }
            }
        }
        out
    }

    /// Projection before normalization.
    pub fn project<T: Real>(&self, p: &[T], frames: &[T]) -> Vec<T> {
        self.proj.forward(p, &self.gather_patches(frames))
    }

    pub fn forward<T: Real>(&self, p: &[T], frames: &[T]) -> (Vec<T>, EmbedCache<T>) {
        let patches = self.gather_patches(frames);
        let projected = self.proj.forward(p, &patches);
        let (out, ln) = self.norm.forward(p, &projected);
        (out, EmbedCache { patches, ln })
    }

    /// Parameter gradients only; the input frames need none.
    pub fn backward<T: Real>(&self, p: &[T], g: &mut [T], cache: &EmbedCache<T>, dy: &[T]) {
        let dproj = self.norm.backward(p, g, &cache.ln, dy);
        self.proj.backward_params(g, &cache.patches, &dproj);
    }
}
