//! Token grids and the window bookkeeping behind shifted-window attention.
//!
//! The blocks never materialise the shifted grid: [`window_order`] composes
//! the cyclic shift with the window partition into one gather index, and the
//! same index scatters results back. The standalone operations here define
//! that composition and are what the tests check it against.

use alloc::vec::Vec;

use crate::error::invalid;
use crate::{Real, Result};

/// A `T' × H' × W' × C'` feature grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid<T> {
    pub dims: [usize; 3],
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Real> TokenGrid<T> {
    pub fn new(dims: [usize; 3], channels: usize, data: Vec<T>) -> Result<Self> {
        if dims.contains(&0) || channels == 0 {
            return Err(invalid!("token grid dims must be positive, got {dims:?}x{channels}"));
        }
        if data.len() != tokens(dims) * channels {
            return Err(invalid!(
                "token grid data has {} values, {dims:?}x{channels} needs {}",
                data.len(),
                tokens(dims) * channels
            ));
        }
        Ok(Self { dims, channels, data })
    }

    pub fn token_count(&self) -> usize {
        tokens(self.dims)
    }

    pub fn token(&self, t: usize, h: usize, w: usize) -> &[T] {
        let i = flat(self.dims, [t, h, w]);
        &self.data[i * self.channels..(i + 1) * self.channels]
    }
}

/// Windows cut from a grid: `count × (w_t·w_h·w_w) × channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Windows<T> {
    pub window: [usize; 3],
    pub count: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T> Windows<T> {
    pub fn tokens_per_window(&self) -> usize {
        tokens(self.window)
    }

    pub fn window_slice(&self, k: usize) -> &[T] {
        let n = self.tokens_per_window() * self.channels;
        &self.data[k * n..(k + 1) * n]
    }
}

#[inline]
pub(crate) fn tokens(dims: [usize; 3]) -> usize {
    dims[0] * dims[1] * dims[2]
}

#[inline]
pub(crate) fn flat(dims: [usize; 3], c: [usize; 3]) -> usize {
    (c[0] * dims[1] + c[1]) * dims[2] + c[2]
}

#[inline]
pub(crate) fn unflat(dims: [usize; 3], i: usize) -> [usize; 3] {
    [i / (dims[1] * dims[2]), (i / dims[2]) % dims[1], i % dims[2]]
}

fn check_divisible(dims: [usize; 3], window: [usize; 3]) {
    assert!(
        (0..3).all(|a| window[a] > 0 && dims[a].is_multiple_of(window[a])),
        "grid {dims:?} is not divisible by window {window:?}; config validation should have caught this"
    );
}

/// `out[j] = in[(j + shift) mod dim]` on every axis.
pub fn cyclic_shift<T: Real>(grid: &TokenGrid<T>, shift: [usize; 3]) -> TokenGrid<T> {
    roll(grid, |a, j| (j + shift[a] % grid.dims[a]) % grid.dims[a])
}

/// Inverse of [`cyclic_shift`]: `out[j] = in[(j - shift) mod dim]`.
pub fn reverse_cyclic_shift<T: Real>(grid: &TokenGrid<T>, shift: [usize; 3]) -> TokenGrid<T> {
    roll(grid, |a, j| (j + grid.dims[a] - shift[a] % grid.dims[a]) % grid.dims[a])
}

fn roll<T: Real>(grid: &TokenGrid<T>, src: impl Fn(usize, usize) -> usize) -> TokenGrid<T> {
    let c = grid.channels;
    let mut data = Vec::with_capacity(grid.data.len());
    for i in 0..grid.token_count() {
        let j = unflat(grid.dims, i);
        let s = flat(grid.dims, [src(0, j[0]), src(1, j[1]), src(2, j[2])]);
        data.extend_from_slice(&grid.data[s * c..(s + 1) * c]);
    }
    TokenGrid { dims: grid.dims, channels: c, data }
}

/// Non-overlapping tiling in (t, h, w) window order, tokens in raster order
/// inside each window.
pub fn window_partition<T: Real>(grid: &TokenGrid<T>, window: [usize; 3]) -> Windows<T> {
    check_divisible(grid.dims, window);
    let order = window_order(grid.dims, window, [0; 3]);
    let c = grid.channels;
    let mut data = Vec::with_capacity(grid.data.len());
    for &s in &order {
        data.extend_from_slice(&grid.data[s * c..(s + 1) * c]);
    }
    Windows { window, count: grid.token_count() / tokens(window), channels: c, data }
}

/// Exact inverse of [`window_partition`].
pub fn window_reverse<T: Real>(windows: &Windows<T>, dims: [usize; 3]) -> TokenGrid<T> {
    check_divisible(dims, windows.window);
    let order = window_order(dims, windows.window, [0; 3]);
    let c = windows.channels;
    let mut data = alloc::vec![T::zero(); windows.data.len()];
    for (k, &s) in order.iter().enumerate() {
        data[s * c..(s + 1) * c].copy_from_slice(&windows.data[k * c..(k + 1) * c]);
    }
    TokenGrid { dims, channels: c, data }
}

/// For every slot of the windowed layout of the cyclically shifted grid,
/// the flat index of the source token in the unshifted grid.
///
/// Equivalent to `window_partition(cyclic_shift(grid, shift), window)`, and
/// scattering through the same index is `reverse_cyclic_shift ∘
/// window_reverse`.
pub fn window_order(dims: [usize; 3], window: [usize; 3], shift: [usize; 3]) -> Vec<usize> {
    check_divisible(dims, window);
    let counts = [dims[0] / window[0], dims[1] / window[1], dims[2] / window[2]];
    let mut order = Vec::with_capacity(tokens(dims));
    for wi in 0..tokens(counts) {
        let wc = unflat(counts, wi);
        for ti in 0..tokens(window) {
            let tc = unflat(window, ti);
            let mut src = [0; 3];
            for a in 0..3 {
                let j = wc[a] * window[a] + tc[a];
                src[a] = (j + shift[a]) % dims[a];
            }
            order.push(flat(dims, src));
        }
    }
    order
}

/// Region label of shifted-layout position `j` along one axis: the segments
/// `[0, dim - w)`, `[dim - w, dim - s)` and `[dim - s, dim)`.
fn region(j: usize, dim: usize, window: usize, shift: usize) -> usize {
    if shift == 0 || j < dim - window {
        0
    } else if j < dim - shift {
        1
    } else {
        2
    }
}

/// Per-window attention permissions for the cyclically shifted layout:
/// `mask[k][i][j]` is true when tokens `i` and `j` of window `k` came from
/// the same region and may attend to each other. Flattened as
/// `count × N × N`.
pub fn shifted_window_mask(dims: [usize; 3], window: [usize; 3], shift: [usize; 3]) -> Vec<bool> {
    check_divisible(dims, window);
    let counts = [dims[0] / window[0], dims[1] / window[1], dims[2] / window[2]];
    let n = tokens(window);
    let mut mask = Vec::with_capacity(tokens(counts) * n * n);
    let mut labels = alloc::vec![0usize; n];
    for wi in 0..tokens(counts) {
        let wc = unflat(counts, wi);
        for (ti, label) in labels.iter_mut().enumerate() {
            let tc = unflat(window, ti);
            let mut l = 0;
            for a in 0..3 {
                l = l * 3 + region(wc[a] * window[a] + tc[a], dims[a], window[a], shift[a]);
            }
            *label = l;
        }
        for i in 0..n {
            for j in 0..n {
                mask.push(labels[i] == labels[j]);
            }
        }
    }
    mask
}
