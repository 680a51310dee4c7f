use alloc::vec::Vec;

use super::grid::{flat, tokens};
use super::layers::{LayerNorm, LayerNormCache, Linear};
use super::params::ParamLayout;
use crate::Real;

/// Spatial 2×2 downsampling: `T'×H'×W'×C' → T'×H'/2×W'/2×2C'`.
///
/// Neighbourhood order is `(0,0), (1,0), (0,1), (1,1)` in (row, col), then
/// layer norm over the `4C'` concatenation and a bias-free projection.
#[derive(Debug, Clone)]
pub struct PatchMerging {
    pub norm: LayerNorm,
    pub reduction: Linear,
    pub dims: [usize; 3],
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct MergeCache<T> {
    ln: LayerNormCache<T>,
    normed: Vec<T>,
}

const NEIGHBOURS: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];

impl PatchMerging {
    pub fn new(layout: &mut ParamLayout, name: &str, dims: [usize; 3], dim: usize) -> Self {
        assert!(
            dims[1].is_multiple_of(2) && dims[2].is_multiple_of(2),
            "patch merging needs even spatial dims, got {dims:?}"
        );
        let norm = LayerNorm::new(layout, &alloc::format!("{name}.norm"), 4 * dim);
        let reduction = Linear::new(layout, &alloc::format!("{name}.reduction"), 4 * dim, 2 * dim, false);
        Self { norm, reduction, dims, dim }
    }

    pub fn output_dims(&self) -> [usize; 3] {
        [self.dims[0], self.dims[1] / 2, self.dims[2] / 2]
    }

    fn source_index(&self) -> Vec<usize> {
        let out = self.output_dims();
        let mut idx = Vec::with_capacity(tokens(self.dims));
        for t in 0..out[0] {
            for i in 0..out[1] {
                for j in 0..out[2] {
                    for (di, dj) in NEIGHBOURS {
                        idx.push(flat(self.dims, [t, 2 * i + di, 2 * j + dj]));
                    }
                }
            }
        }
        idx
    }

    /// The `4C'` concatenations, one row per output token.
    pub fn gather<T: Real>(&self, x: &[T]) -> Vec<T> {
        let c = self.dim;
        let mut out = Vec::with_capacity(x.len());
        for s in self.source_index() {
            out.extend_from_slice(&x[s * c..(s + 1) * c]);
        }
        out
    }

    pub fn forward<T: Real>(&self, p: &[T], x: &[T]) -> (Vec<T>, MergeCache<T>) {
        let gathered = self.gather(x);
        let (normed, ln) = self.norm.forward(p, &gathered);
        let out = self.reduction.forward(p, &normed);
        (out, MergeCache { ln, normed })
    }

    pub fn backward<T: Real>(&self, p: &[T], g: &mut [T], cache: &MergeCache<T>, dy: &[T]) -> Vec<T> {
        let c = self.dim;
        let dnormed = self.reduction.backward(p, g, &cache.normed, dy);
        let dgathered = self.norm.backward(p, g, &cache.ln, &dnormed);
        let mut dx = alloc::vec![T::zero(); dgathered.len()];
        for (k, s) in self.source_index().into_iter().enumerate() {
            dx[s * c..(s + 1) * c].copy_from_slice(&dgathered[k * c..(k + 1) * c]);
        }
        dx
    }
}
