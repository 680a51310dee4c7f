use alloc::vec::Vec;

use rand::Rng;

use super::attention::{AttentionCache, WindowAttention};
use super::grid::{shifted_window_mask, tokens, window_order};
use super::layers::{gelu, gelu_grad, LayerNorm, LayerNormCache, Linear};
use super::params::ParamLayout;
use crate::rng::SeededRng;
use crate::Real;

/// Pre-norm transformer block with (shifted) window attention and an MLP.
///
/// The shifted variant rolls the grid by `shift` before partitioning, masks
/// pairs that the roll brought together, and rolls back afterwards.
#[derive(Debug, Clone)]
pub struct SwinBlock {
    pub norm1: LayerNorm,
    pub attn: WindowAttention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub dims: [usize; 3],
    pub shift: [usize; 3],
    order: Vec<usize>,
    mask: Option<Vec<bool>>,
    drop_path: f64,
    dropout: f64,
}

#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    ln1: LayerNormCache<T>,
    attn: AttentionCache<T>,
    attn_scale: Option<Vec<T>>,
    ln2: LayerNormCache<T>,
    normed2: Vec<T>,
    hidden: Vec<T>,
    act: Vec<T>,
    mlp_scale: Option<Vec<T>>,
}

impl<T> BlockCache<T> {
    pub fn attention(&self) -> &AttentionCache<T> {
        &self.attn
    }
}

/// Construction parameters for one block.
#[derive(Debug, Clone, Copy)]
pub struct BlockSpec {
    pub dim: usize,
    pub heads: usize,
    pub hidden: usize,
    pub dims: [usize; 3],
    pub window: [usize; 3],
    /// Zero for a regular block.
    pub shift: [usize; 3],
    pub bias_table: usize,
    pub drop_path: f64,
    pub dropout: f64,
}

impl SwinBlock {
    pub fn new(layout: &mut ParamLayout, name: &str, spec: BlockSpec) -> Self {
        let norm1 = LayerNorm::new(layout, &alloc::format!("{name}.norm1"), spec.dim);
        let attn = WindowAttention::new(
            layout,
            &alloc::format!("{name}.attn"),
            spec.dim,
            spec.heads,
            spec.window,
            spec.bias_table,
        );
        let norm2 = LayerNorm::new(layout, &alloc::format!("{name}.norm2"), spec.dim);
        let fc1 = Linear::new(layout, &alloc::format!("{name}.mlp.fc1"), spec.dim, spec.hidden, true);
        let fc2 = Linear::new(layout, &alloc::format!("{name}.mlp.fc2"), spec.hidden, spec.dim, true);
        let order = window_order(spec.dims, spec.window, spec.shift);
        let mask = spec.shift.iter().any(|&s| s > 0).then(|| shifted_window_mask(spec.dims, spec.window, spec.shift));
        Self {
            norm1,
            attn,
            norm2,
            fc1,
            fc2,
            dims: spec.dims,
            shift: spec.shift,
            order,
            mask,
            drop_path: spec.drop_path,
            dropout: spec.dropout,
        }
    }

    pub fn is_shifted(&self) -> bool {
        self.mask.is_some()
    }

    fn dim(&self) -> usize {
        self.norm1.dim
    }

    /// Per-element multiplier for one residual branch: inverted dropout on
    /// elements times a stochastic-depth keep/drop for the whole branch.
    fn branch_scale<T: Real>(&self, len: usize, rng: Option<&mut SeededRng>) -> Option<Vec<T>> {
        let rng = rng?;
        if self.dropout == 0.0 && self.drop_path == 0.0 {
            return None;
        }
        let path =
            if self.drop_path > 0.0 && rng.gen::<f64>() < self.drop_path { 0.0 } else { 1.0 / (1.0 - self.drop_path) };
        let keep = 1.0 / (1.0 - self.dropout);
        Some(
            (0..len)
                .map(|_| {
                    let d = if self.dropout > 0.0 && rng.gen::<f64>() < self.dropout { 0.0 } else { keep };
                    T::from_f64(d * path)
                })
                .collect(),
        )
    }

    pub fn forward<T: Real>(&self, p: &[T], x: &[T], mut rng: Option<&mut SeededRng>) -> (Vec<T>, BlockCache<T>) {
        let c = self.dim();
        debug_assert_eq!(x.len(), tokens(self.dims) * c);

        let (normed1, ln1) = self.norm1.forward(p, x);
        let windows = gather(&normed1, &self.order, c);
        let (attended, attn) = self.attn.forward(p, &windows, self.mask.as_deref());
        let branch = scatter(&attended, &self.order, c);
        let attn_scale = self.branch_scale::<T>(branch.len(), rng.as_deref_mut());
        let mut x1 = x.to_vec();
        add_branch(&mut x1, &branch, attn_scale.as_deref());

        let (normed2, ln2) = self.norm2.forward(p, &x1);
        let hidden = self.fc1.forward(p, &normed2);
        let act: Vec<T> = hidden.iter().map(|&h| gelu(h)).collect();
        let mlp = self.fc2.forward(p, &act);
        let mlp_scale = self.branch_scale::<T>(mlp.len(), rng);
        add_branch(&mut x1, &mlp, mlp_scale.as_deref());

        (x1, BlockCache { ln1, attn, attn_scale, ln2, normed2, hidden, act, mlp_scale })
    }

    pub fn backward<T: Real>(&self, p: &[T], g: &mut [T], cache: &BlockCache<T>, dy: &[T]) -> Vec<T> {
        let c = self.dim();

        let dmlp = scaled(dy, cache.mlp_scale.as_deref());
        let dact = self.fc2.backward(p, g, &cache.act, &dmlp);
        let dhidden: Vec<T> = dact.iter().zip(&cache.hidden).map(|(&d, &h)| d * gelu_grad(h)).collect();
        let dnormed2 = self.fc1.backward(p, g, &cache.normed2, &dhidden);
        let mut dx1 = self.norm2.backward(p, g, &cache.ln2, &dnormed2);
        for (a, &b) in dx1.iter_mut().zip(dy) {
            *a += b;
        }

        let dbranch = scaled(&dx1, cache.attn_scale.as_deref());
        let dwindows = gather(&dbranch, &self.order, c);
        let dwin_in = self.attn.backward(p, g, &cache.attn, &dwindows);
        let dnormed1 = scatter(&dwin_in, &self.order, c);
        let mut dx = self.norm1.backward(p, g, &cache.ln1, &dnormed1);
        for (a, &b) in dx.iter_mut().zip(&dx1) {
            *a += b;
        }
        dx
    }
}

fn gather<T: Real>(x: &[T], order: &[usize], c: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for &s in order {
        out.extend_from_slice(&x[s * c..(s + 1) * c]);
    }
    out
}

fn scatter<T: Real>(w: &[T], order: &[usize], c: usize) -> Vec<T> {
    let mut out = alloc::vec![T::zero(); w.len()];
    for (k, &s) in order.iter().enumerate() {
        out[s * c..(s + 1) * c].copy_from_slice(&w[k * c..(k + 1) * c]);
    }
    out
}

fn add_branch<T: Real>(x: &mut [T], branch: &[T], scale: Option<&[T]>) {
    match scale {
        Some(s) => {
            for ((a, &b), &m) in x.iter_mut().zip(branch).zip(s) {
                *a += b * m;
            }
        }
        None => {
            for (a, &b) in x.iter_mut().zip(branch) {
                *a += b;
            }
        }
    }
}

fn scaled<T: Real>(d: &[T], scale: Option<&[T]>) -> Vec<T> {
    match scale {
        Some(s) => d.iter().zip(s).map(|(&a, &m)| a * m).collect(),
        None => d.to_vec(),
    }
}
