//! Order-preserving parallel map.
//!
//! Work that may run concurrently (per-sample gradients inside a batch,
//! per-probe finite differences, independent runs) is expressed as an indexed
//! map whose results come back in index order. Reductions are then done
//! serially by the caller, so a parallel executor produces bit-identical
//! results to [`Serial`].

use alloc::vec::Vec;

pub trait Executor: Sync {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs every job on the calling thread, in order.
#[derive(Debug, Default, Clone, Copy)]
pub struct Serial;

impl Executor for Serial {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}
