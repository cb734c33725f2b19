//! Row-level data parallelism with a sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over the rayon global
//! pool. Every helper computes each output element independently, so results
//! are bit-identical with and without the feature.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Calls `f(i, row_i)` for every row of a row-major buffer with `width` columns.
pub(crate) fn for_each_row<F>(buf: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    buf.par_chunks_mut(width)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
    #[cfg(not(feature = "parallel"))]
    buf.chunks_mut(width)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

/// Evaluates `f` on `0..n` and collects the results in index order.
pub(crate) fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Whether this build spreads work across threads.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
