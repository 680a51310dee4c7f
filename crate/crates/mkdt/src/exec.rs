use mkdt_core::Executor;
use rayon::prelude::*;

/// Spreads indexed jobs over the rayon thread pool; results keep index order.
#[derive(Debug, Default, Clone, Copy)]
pub struct Rayon;

impl Executor for Rayon {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).into_par_iter().map(f).collect()
    }
}
