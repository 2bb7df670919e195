//! Execution strategy for the data-parallel kernels.
//!
//! Every hot kernel is written against column slices of column-major
//! matrices, so "parallel" always means "fan columns out over the global
//! rayon pool". With the `parallel` feature disabled the [`Exec::Parallel`]
//! variant still exists but degrades to the sequential path, which keeps
//! call sites and CLI plumbing identical across builds.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use num_complex::Complex64 as C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        Exec::Parallel
    }
}

impl Exec {
    /// Whether this strategy will actually run on multiple threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// Apply `f(j, column_j)` to every `nrows`-long column slice of `out`.
pub fn for_each_column<F>(exec: Exec, nrows: usize, out: &mut [C64], f: F)
where
    F: Fn(usize, &mut [C64]) + Sync + Send,
{
    debug_assert_eq!(out.len() % nrows.max(1), 0);
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            out.par_chunks_mut(nrows)
                .enumerate()
                .for_each(|(j, col)| f(j, col));
        }
        _ => {
            out.chunks_mut(nrows)
                .enumerate()
                .for_each(|(j, col)| f(j, col));
        }
    }
}

/// Map `f` over `items`, preserving order.
pub fn map<T, U, F>(exec: Exec, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => items.par_iter().map(f).collect(),
        _ => items.iter().map(f).collect(),
    }
}
