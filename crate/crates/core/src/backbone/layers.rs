//! Dense layers with explicit backward passes.
//!
//! Activations are row-major `rows × features` slices. Parameters live in a
//! flat vector and layers only remember their offsets into it; gradients are
//! accumulated into a vector of the same layout.

use alloc::vec::Vec;

use super::params::{Init, ParamLayout};
use crate::Real;

/// `y = x · W + b` with `W` stored `in × out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: usize,
    pub bias: Option<usize>,
    pub inp: usize,
    pub out: usize,
}

impl Linear {
    pub fn new(layout: &mut ParamLayout, name: &str, inp: usize, out: usize, bias: bool) -> Self {
        let weight = layout.push(alloc::format!("{name}.weight"), &[inp, out], Init::TruncNormal);
        let bias = bias.then(|| layout.push(alloc::format!("{name}.bias"), &[out], Init::Zeros));
        Self { weight, bias, inp, out }
    }

    fn w<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.weight..self.weight + self.inp * self.out]
    }

    pub fn forward<T: Real>(&self, p: &[T], x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len() % self.inp, 0);
        let rows = x.len() / self.inp;
        let w = self.w(p);
        let mut y = Vec::with_capacity(rows * self.out);
        match self.bias {
            Some(b) => {
                for _ in 0..rows {
                    y.extend_from_slice(&p[b..b + self.out]);
                }
            }
            None => y.resize(rows * self.out, T::zero()),
        }
        for (xr, yr) in x.chunks_exact(self.inp).zip(y.chunks_exact_mut(self.out)) {
            for (&xi, wr) in xr.iter().zip(w.chunks_exact(self.out)) {
                if xi == T::zero() {
                    continue;
                }
                for (yo, &wo) in yr.iter_mut().zip(wr) {
                    *yo += xi * wo;
                }
            }
        }
        y
    }

    /// Accumulates weight/bias gradients and returns `dL/dx`.
    pub fn backward<T: Real>(&self, p: &[T], g: &mut [T], x: &[T], dy: &[T]) -> Vec<T> {
        self.backward_params(g, x, dy);
        // dx = dy · Wᵀ, computed as axpy rows of the transposed weight
        let w = self.w(p);
        let mut wt = alloc::vec![T::zero(); self.inp * self.out];
        for i in 0..self.inp {
            for o in 0..self.out {
                wt[o * self.inp + i] = w[i * self.out + o];
            }
        }
        let rows = dy.len() / self.out;
        let mut dx = alloc::vec![T::zero(); rows * self.inp];
        for (dyr, dxr) in dy.chunks_exact(self.out).zip(dx.chunks_exact_mut(self.inp)) {
            for (&d, wr) in dyr.iter().zip(wt.chunks_exact(self.inp)) {
                if d == T::zero() {
                    continue;
                }
                for (dxi, &wi) in dxr.iter_mut().zip(wr) {
                    *dxi += d * wi;
                }
            }
        }
        dx
    }

    /// Accumulates weight/bias gradients only.
    pub fn backward_params<T: Real>(&self, g: &mut [T], x: &[T], dy: &[T]) {
        let gw = &mut g[self.weight..self.weight + self.inp * self.out];
        for (xr, dyr) in x.chunks_exact(self.inp).zip(dy.chunks_exact(self.out)) {
            for (&xi, gr) in xr.iter().zip(gw.chunks_exact_mut(self.out)) {
                if xi == T::zero() {
                    continue;
                }
                for (go, &d) in gr.iter_mut().zip(dyr) {
                    *go += xi * d;
                }
            }
        }
        if let Some(b) = self.bias {
            let gb = &mut g[b..b + self.out];
            for dyr in dy.chunks_exact(self.out) {
                for (go, &d) in gb.iter_mut().zip(dyr) {
                    *go += d;
                }
            }
        }
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Layer normalization over the feature axis with learned scale and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub weight: usize,
    pub bias: usize,
    pub dim: usize,
}

/// Saved normalized activations and inverse standard deviations.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

impl LayerNorm {
    pub fn new(layout: &mut ParamLayout, name: &str, dim: usize) -> Self {
        let weight = layout.push(alloc::format!("{name}.weight"), &[dim], Init::Ones);
        let bias = layout.push(alloc::format!("{name}.bias"), &[dim], Init::Zeros);
        Self { weight, bias, dim }
    }

    pub fn forward<T: Real>(&self, p: &[T], x: &[T]) -> (Vec<T>, LayerNormCache<T>) {
        let d = self.dim;
        let rows = x.len() / d;
        let gamma = &p[self.weight..self.weight + d];
        let beta = &p[self.bias..self.bias + d];
        let eps = T::from_f64(LAYER_NORM_EPS);
        let inv_d = T::one() / T::from_usize(d);
        let mut y = Vec::with_capacity(x.len());
        let mut xhat = Vec::with_capacity(x.len());
        let mut rstd = Vec::with_capacity(rows);
        for xr in x.chunks_exact(d) {
            let mean = xr.iter().copied().sum::<T>() * inv_d;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for j in 0..d {
                let h = (xr[j] - mean) * r;
                xhat.push(h);
                y.push(h * gamma[j] + beta[j]);
            }
        }
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward<T: Real>(&self, p: &[T], g: &mut [T], cache: &LayerNormCache<T>, dy: &[T]) -> Vec<T> {
        let d = self.dim;
        let gamma = &p[self.weight..self.weight + d];
        let inv_d = T::one() / T::from_usize(d);
        let mut dx = Vec::with_capacity(dy.len());
        let mut dxhat = alloc::vec![T::zero(); d];
        let mut dgamma = alloc::vec![T::zero(); d];
        let mut dbeta = alloc::vec![T::zero(); d];
        for ((dyr, xr), &r) in dy.chunks_exact(d).zip(cache.xhat.chunks_exact(d)).zip(&cache.rstd) {
            let mut mean_dxhat = T::zero();
            let mut mean_dxhat_xhat = T::zero();
            for j in 0..d {
                dgamma[j] += dyr[j] * xr[j];
                dbeta[j] += dyr[j];
                dxhat[j] = dyr[j] * gamma[j];
                mean_dxhat += dxhat[j];
                mean_dxhat_xhat += dxhat[j] * xr[j];
            }
            mean_dxhat *= inv_d;
            mean_dxhat_xhat *= inv_d;
            for j in 0..d {
                dx.push(r * (dxhat[j] - mean_dxhat - xr[j] * mean_dxhat_xhat));
            }
        }
        for j in 0..d {
            g[self.weight + j] += dgamma[j];
            g[self.bias + j] += dbeta[j];
        }
        dx
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// GELU, tanh approximation.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    let u = T::from_f64(SQRT_2_OVER_PI) * (x + T::from_f64(GELU_CUBIC) * x * x * x);
    half * x * (T::one() + u.tanh())
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    let c = T::from_f64(GELU_CUBIC);
    let k = T::from_f64(SQRT_2_OVER_PI);
    let th = (k * (x + c * x * x * x)).tanh();
    half * (T::one() + th) + half * x * (T::one() - th * th) * k * (T::one() + T::from_f64(3.0) * c * x * x)
}
