//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) these run on the rayon pool; without
//! it they fall back to plain iterators. Reductions are always performed over
//! fixed-size chunks combined in index order, so results are bitwise identical
//! regardless of thread count or feature selection.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Observations per reduction chunk.
pub const CHUNK: usize = 256;

/// Evaluate `f(i)` for `i in 0..n`, preserving order.
pub fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
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

/// Evaluate `f` on each item of a slice, preserving order.
pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Split `0..n` into [`CHUNK`]-sized ranges, evaluate `f` on each and fold the
/// partial results left to right with `combine`.
pub fn chunked_reduce<A, F, C>(n: usize, f: F, mut combine: C) -> Option<A>
where
    A: Send,
    F: Fn(Range<usize>) -> A + Sync + Send,
    C: FnMut(A, A) -> A,
{
    let chunks = n.div_ceil(CHUNK);
    let parts = map_indices(chunks, |c| f(c * CHUNK..((c + 1) * CHUNK).min(n)));
    let mut it = parts.into_iter();
    let first = it.next()?;
    Some(it.fold(first, &mut combine))
}

/// Number of worker threads that [`map_indices`] will use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Configure the global pool. A no-op for the sequential build or when a pool
/// is already installed.
pub fn init_threads(threads: Option<usize>) {
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = threads {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_sum_matches_sequential_sum() {
        let n = 1000;
        let vals: Vec<f64> = (0..n).map(|i| (i as f64).sin() * 1e-3).collect();
        let total = chunked_reduce(n, |r| vals[r].iter().sum::<f64>(), |a, b| a + b).unwrap();
        let mut expected = 0.0;
        for c in 0..n.div_ceil(CHUNK) {
            expected += vals[c * CHUNK..((c + 1) * CHUNK).min(n)].iter().sum::<f64>();
        }
        assert_eq!(total.to_bits(), expected.to_bits());
    }

    #[test]
    fn empty_reduce_is_none() {
        assert!(chunked_reduce(0, |_| 1.0, |a, b| a + b).is_none());
    }

    #[test]
    fn map_preserves_order() {
        assert_eq!(map_indices(5, |i| i * 2), vec![0, 2, 4, 6, 8]);
    }
}
