//! Multi-head self-attention inside local 3D windows.

use alloc::vec::Vec;

use super::grid::{tokens, unflat};
use super::layers::Linear;
use super::params::{Init, ParamLayout};
use crate::Real;

/// Score added to masked pairs before the softmax.
pub const MASK_PENALTY: f64 = -1e4;

/// Entries in a relative position bias table for one head:
/// `(2w_t - 1)(2w_h - 1)(2w_w - 1)`.
pub fn bias_table_len(window: [usize; 3]) -> usize {
    (2 * window[0] - 1) * (2 * window[1] - 1) * (2 * window[2] - 1)
}

/// Registers a zero-initialised `table_len × heads` relative position bias.
pub fn register_bias_table(layout: &mut ParamLayout, name: &str, window: [usize; 3], heads: usize) -> usize {
    layout.push(alloc::format!("{name}.relative_position_bias"), &[bias_table_len(window), heads], Init::Zeros)
}

/// Table row for the offset between in-window tokens `i` and `j`.
pub fn relative_index(window: [usize; 3], i: usize, j: usize) -> usize {
    let a = unflat(window, i);
    let b = unflat(window, j);
    let mut idx = 0;
    for ax in 0..3 {
        let off = a[ax] + window[ax] - 1 - b[ax];
        idx = idx * (2 * window[ax] - 1) + off;
    }
    idx
}

#[derive(Debug, Clone)]
pub struct WindowAttention {
    pub qkv: Linear,
    pub proj: Linear,
    pub dim: usize,
    pub heads: usize,
    pub window: [usize; 3],
    /// Offset of the (possibly shared) relative position bias table.
    pub bias_table: usize,
    rel_index: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    input: Vec<T>,
    qkv: Vec<T>,
    probs: Vec<T>,
    context: Vec<T>,
}

impl<T> AttentionCache<T> {
    /// Softmax weights, `windows × heads × N × N`.
    pub fn probs(&self) -> &[T] {
        &self.probs
    }
}

impl WindowAttention {
    pub fn new(
        layout: &mut ParamLayout,
        name: &str,
        dim: usize,
        heads: usize,
        window: [usize; 3],
        bias_table: usize,
    ) -> Self {
        assert!(heads > 0 && dim.is_multiple_of(heads), "width {dim} not divisible by {heads} heads");
        let qkv = Linear::new(layout, &alloc::format!("{name}.qkv"), dim, 3 * dim, true);
        let proj = Linear::new(layout, &alloc::format!("{name}.proj"), dim, dim, true);
        let n = tokens(window);
        let rel_index = (0..n * n).map(|ij| relative_index(window, ij / n, ij % n)).collect();
        Self { qkv, proj, dim, heads, window, bias_table, rel_index }
    }

    pub fn tokens_per_window(&self) -> usize {
        tokens(self.window)
    }

    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// `x` holds whole windows, `count × N × C`. `mask`, when given, is
    /// `count × N × N` with `true` marking permitted pairs.
    pub fn forward<T: Real>(&self, p: &[T], x: &[T], mask: Option<&[bool]>) -> (Vec<T>, AttentionCache<T>) {
        let (c, n, hd, heads) = (self.dim, self.tokens_per_window(), self.head_dim(), self.heads);
        let count = x.len() / (n * c);
        let qkv = self.qkv.forward(p, x);
        let scale = T::from_f64(1.0 / libm::sqrt(hd as f64));
        let penalty = T::from_f64(MASK_PENALTY);
        let table = &p[self.bias_table..self.bias_table + bias_table_len(self.window) * heads];

        let mut probs = alloc::vec![T::zero(); count * heads * n * n];
        let mut context = alloc::vec![T::zero(); count * n * c];
        let mut q = alloc::vec![T::zero(); n * hd];
        let mut kt = alloc::vec![T::zero(); hd * n];
        let mut v = alloc::vec![T::zero(); n * hd];

        for w in 0..count {
            let rows = &qkv[w * n * 3 * c..(w + 1) * n * 3 * c];
            for h in 0..heads {
                split_head(rows, c, h, hd, &mut q, &mut kt, &mut v);
                let pw = &mut probs[(w * heads + h) * n * n..(w * heads + h + 1) * n * n];
                for i in 0..n {
                    let srow = &mut pw[i * n..(i + 1) * n];
                    for (s, &r) in srow.iter_mut().zip(&self.rel_index[i * n..(i + 1) * n]) {
                        *s = table[r * heads + h];
                    }
                    for e in 0..hd {
                        let qe = q[i * hd + e] * scale;
                        for (s, &k) in srow.iter_mut().zip(&kt[e * n..(e + 1) * n]) {
                            *s += qe * k;
                        }
                    }
                    if let Some(mask) = mask {
                        let mrow = &mask[(w * n + i) * n..(w * n + i + 1) * n];
                        for (s, &allowed) in srow.iter_mut().zip(mrow) {
                            if !allowed {
                                *s += penalty;
                            }
                        }
                    }
                    softmax_in_place(srow);
                    let ctx = &mut context[(w * n + i) * c + h * hd..(w * n + i) * c + (h + 1) * hd];
                    for (j, &pij) in srow.iter().enumerate() {
                        for (o, &vv) in ctx.iter_mut().zip(&v[j * hd..(j + 1) * hd]) {
                            *o += pij * vv;
                        }
                    }
                }
            }
        }
        let out = self.proj.forward(p, &context);
        (out, AttentionCache { input: x.to_vec(), qkv, probs, context })
    }

    pub fn backward<T: Real>(&self, p: &[T], g: &mut [T], cache: &AttentionCache<T>, dy: &[T]) -> Vec<T> {
        let (c, n, hd, heads) = (self.dim, self.tokens_per_window(), self.head_dim(), self.heads);
        let count = cache.input.len() / (n * c);
        let scale = T::from_f64(1.0 / libm::sqrt(hd as f64));
        let dctx = self.proj.backward(p, g, &cache.context, dy);

        let mut dqkv = alloc::vec![T::zero(); cache.qkv.len()];
        let mut q = alloc::vec![T::zero(); n * hd];
        let mut kt = alloc::vec![T::zero(); hd * n];
        let mut v = alloc::vec![T::zero(); n * hd];
        let mut vt = alloc::vec![T::zero(); hd * n];
        let mut k = alloc::vec![T::zero(); n * hd];
        let mut dp = alloc::vec![T::zero(); n];
        let mut dq = alloc::vec![T::zero(); n * hd];
        let mut dk = alloc::vec![T::zero(); n * hd];
        let mut dv = alloc::vec![T::zero(); n * hd];

        for w in 0..count {
            let rows = &cache.qkv[w * n * 3 * c..(w + 1) * n * 3 * c];
            for h in 0..heads {
                split_head(rows, c, h, hd, &mut q, &mut kt, &mut v);
                for j in 0..n {
                    for e in 0..hd {
                        vt[e * n + j] = v[j * hd + e];
                        k[j * hd + e] = kt[e * n + j];
                    }
                }
                dq.fill(T::zero());
                dk.fill(T::zero());
                dv.fill(T::zero());
                let pw = &cache.probs[(w * heads + h) * n * n..(w * heads + h + 1) * n * n];
                for i in 0..n {
                    let prow = &pw[i * n..(i + 1) * n];
                    let dctx_i = &dctx[(w * n + i) * c + h * hd..(w * n + i) * c + (h + 1) * hd];
                    // dP[i, :] = dctx_i · Vᵀ ; dV[j] += P[i, j] · dctx_i
                    dp.fill(T::zero());
                    for e in 0..hd {
                        let d = dctx_i[e];
                        for (o, &x) in dp.iter_mut().zip(&vt[e * n..(e + 1) * n]) {
                            *o += d * x;
                        }
                    }
                    for (j, &pij) in prow.iter().enumerate() {
                        for (o, &d) in dv[j * hd..(j + 1) * hd].iter_mut().zip(dctx_i) {
                            *o += pij * d;
                        }
                    }
                    // softmax backward
                    let dot: T = prow.iter().zip(&dp).map(|(&a, &b)| a * b).sum();
                    for j in 0..n {
                        let ds = prow[j] * (dp[j] - dot);
                        g[self.bias_table + self.rel_index[i * n + j] * heads + h] += ds;
                        let ds = ds * scale;
                        for e in 0..hd {
                            dq[i * hd + e] += ds * k[j * hd + e];
                            dk[j * hd + e] += ds * q[i * hd + e];
                        }
                    }
                }
                for i in 0..n {
                    let row = &mut dqkv[(w * n + i) * 3 * c..(w * n + i + 1) * 3 * c];
                    row[h * hd..(h + 1) * hd].copy_from_slice(&dq[i * hd..(i + 1) * hd]);
                    row[c + h * hd..c + (h + 1) * hd].copy_from_slice(&dk[i * hd..(i + 1) * hd]);
                    row[2 * c + h * hd..2 * c + (h + 1) * hd].copy_from_slice(&dv[i * hd..(i + 1) * hd]);
                }
            }
        }
        self.qkv.backward(p, g, &cache.input, &dqkv)
    }
}

/// Unpacks one head of a window's `N × 3C` qkv rows into `q` (N × d),
/// `kᵀ` (d × N) and `v` (N × d).
fn split_head<T: Real>(rows: &[T], c: usize, h: usize, hd: usize, q: &mut [T], kt: &mut [T], v: &mut [T]) {
    let n = rows.len() / (3 * c);
    for i in 0..n {
        let r = &rows[i * 3 * c..(i + 1) * 3 * c];
        q[i * hd..(i + 1) * hd].copy_from_slice(&r[h * hd..(h + 1) * hd]);
        v[i * hd..(i + 1) * hd].copy_from_slice(&r[2 * c + h * hd..2 * c + (h + 1) * hd]);
        for e in 0..hd {
            kt[e * n + i] = r[c + h * hd + e];
        }
    }
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for s in row.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    let inv = T::one() / sum;
    for s in row.iter_mut() {
        *s *= inv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn layer(dim: usize, heads: usize, window: [usize; 3]) -> (ParamLayout, WindowAttention) {
        let mut layout = ParamLayout::default();
        let table = register_bias_table(&mut layout, "t", window, heads);
        let attn = WindowAttention::new(&mut layout, "a", dim, heads, window, table);
        (layout, attn)
    }

    fn rand_vec(n: usize, seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = crate::rng::seeded(seed);
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
    }

    #[test]
    fn relative_index_is_centred() {
        let w = [2, 4, 4];
        let n = tokens(w);
        let centre = bias_table_len(w) / 2;
        for i in 0..n {
            assert_eq!(relative_index(w, i, i), centre);
        }
        assert_eq!(relative_index(w, n - 1, 0), bias_table_len(w) - 1);
        assert_eq!(relative_index(w, 0, n - 1), 0);
    }

    #[test]
    fn constant_scores_average_projected_values() {
        // zero query/key projections make Q = K = 0 for every token
        let (layout, attn) = layer(4, 2, [1, 1, 3]);
        let mut p: Vec<f64> = layout.init(1);
        for i in 0..4 {
            for o in 0..8 {
                p[attn.qkv.weight + i * 12 + o] = 0.0;
            }
        }
        let x = rand_vec(12, 11, 1.0);
        let (out, cache) = attn.forward(&p, &x, None);
        let third = 1.0 / 3.0;
        assert!(cache.probs().iter().all(|&w| (w - third).abs() < 1e-12));

        // expected: proj(mean over tokens of x · Wv + bv)
        let mut mean_v = [0.0; 4];
        for r in 0..3 {
            for o in 0..4 {
                let mut acc = p[attn.qkv.bias.unwrap() + 8 + o];
                for i in 0..4 {
                    acc += x[r * 4 + i] * p[attn.qkv.weight + i * 12 + 8 + o];
                }
                mean_v[o] += acc / 3.0;
            }
        }
        for o in 0..4 {
            let mut expected = p[attn.proj.bias.unwrap() + o];
            for i in 0..4 {
                expected += mean_v[i] * p[attn.proj.weight + i * 4 + o];
            }
            for r in 0..3 {
                assert!((out[r * 4 + o] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fully_masked_row_attends_to_self() {
        let (layout, attn) = layer(4, 1, [1, 1, 3]);
        let p: Vec<f64> = layout.init(2);
        let x = rand_vec(12, 3, 1.0);
        // token 1 may only see itself
        let mut mask = alloc::vec![true; 9];
        mask[3] = false;
        mask[5] = false;
        let (_, cache) = attn.forward(&p, &x, Some(&mask));
        let row = &cache.probs()[3..6];
        assert!(row[0] < 1e-4 && row[2] < 1e-4);
        assert!((row[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn two_token_hand_computation() {
        // one head, width 1: q = k = v = x (identity qkv), proj = identity
        let (layout, attn) = layer(1, 1, [1, 1, 2]);
        let mut p: Vec<f64> = alloc::vec![0.0; layout.len()];
        for o in 0..3 {
            p[attn.qkv.weight + o] = 1.0;
        }
        p[attn.proj.weight] = 1.0;
        let x = [1.0, 2.0];
        let (out, _) = attn.forward(&p, &x, None);
        // scores for token 0: [1, 2]; token 1: [2, 4]
        let e = libm::exp;
        let o0 = (1.0 * e(1.0) + 2.0 * e(2.0)) / (e(1.0) + e(2.0));
        let o1 = (1.0 * e(2.0) + 2.0 * e(4.0)) / (e(2.0) + e(4.0));
        assert!((out[0] - o0).abs() < 1e-6);
        assert!((out[1] - o1).abs() < 1e-6);
    }

    #[test]
    fn backward_matches_differences() {
        let window = [1, 2, 2];
        let (layout, attn) = layer(4, 2, window);
        let mut p: Vec<f64> = layout.init(5);
        // exercise the bias path with non-zero entries
        let t = bias_table_len(window) * 2;
        for (i, b) in p[attn.bias_table..attn.bias_table + t].iter_mut().enumerate() {
            *b = 0.1 * (i as f64).sin();
        }
        for w in p.iter_mut() {
            *w *= 10.0;
        }
        let x = rand_vec(2 * 4 * 4, 6, 1.0);
        let mask: Vec<bool> = (0..2 * 16).map(|i| i % 5 != 1).collect();
        let probe = rand_vec(x.len(), 7, 1.0);
        let loss = |p: &[f64], x: &[f64]| -> f64 {
            attn.forward(p, x, Some(&mask)).0.iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = attn.forward(&p, &x, Some(&mask));
        let mut g = alloc::vec![0.0; layout.len()];
        let dx = attn.backward(&p, &mut g, &cache, &probe);
        let h = 1e-6;
        for i in 0..p.len() {
            let mut a = p.clone();
            a[i] += h;
            let up = loss(&a, &x);
            a[i] -= 2.0 * h;
            let num = (up - loss(&a, &x)) / (2.0 * h);
            assert!((g[i] - num).abs() < 1e-6 * (1.0 + num.abs()), "param {i}: {} vs {num}", g[i]);
        }
        for i in 0..x.len() {
            let mut a = x.clone();
            a[i] += h;
            let up = loss(&p, &a);
            a[i] -= 2.0 * h;
            let num = (up - loss(&p, &a)) / (2.0 * h);
            assert!((dx[i] - num).abs() < 1e-6 * (1.0 + num.abs()), "input {i}: {} vs {num}", dx[i]);
        }
    }
}
