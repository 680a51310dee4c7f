use alloc::string::String;
use alloc::vec::Vec;

use crate::{rng, Real};

/// How a parameter tensor is initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Truncated normal, σ = 0.02, cut at ±2σ.
    TruncNormal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub init: Init,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Named tensors packed into one flat parameter vector.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    len: usize,
}

impl ParamLayout {
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> usize {
        let offset = self.len;
        let entry = ParamEntry { name: name.into(), shape: shape.to_vec(), offset, init };
        self.len += entry.len();
        self.entries.push(entry);
        offset
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// The named tensor's slice of `params`. Panics on an unknown name.
    pub fn slice<'a, T>(&self, params: &'a [T], name: &str) -> &'a [T] {
        let e = self.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        &params[e.range()]
    }

    pub fn slice_mut<'a, T>(&self, params: &'a mut [T], name: &str) -> &'a mut [T] {
        let e = self.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        &mut params[e.range()]
    }

    /// Draws a fresh parameter vector. Values are generated in `f64` so the
    /// `f32` and `f64` initialisations agree up to rounding.
    pub fn init<T: Real>(&self, seed: u64) -> Vec<T> {
        let mut rng = rng::seeded(seed);
        let mut out = Vec::with_capacity(self.len);
        for e in &self.entries {
            match e.init {
                Init::Zeros => out.extend(core::iter::repeat_n(T::zero(), e.len())),
                Init::Ones => out.extend(core::iter::repeat_n(T::one(), e.len())),
                Init::TruncNormal => {
                    out.extend((0..e.len()).map(|_| T::from_f64(rng::truncated_normal(&mut rng, 0.02))))
                }
            }
        }
        out
    }
}
