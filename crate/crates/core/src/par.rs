//! Data-parallel execution helpers.
//!
//! Compiled with the `parallel` feature (the default), the hot inner loops
//! run on rayon; without it every helper falls back to plain sequential
//! iteration and rayon is not linked at all. A runtime switch lets callers
//! (and the bench suite) force sequential execution even in a parallel
//! build. Both paths perform the same per-item arithmetic in the same
//! order, so results are bitwise identical either way.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

static PARALLEL_ENABLED: AtomicBool = AtomicBool::new(cfg!(feature = "parallel"));

/// Whether the data-parallel paths are currently active.
pub fn parallelism_enabled() -> bool {
    cfg!(feature = "parallel") && PARALLEL_ENABLED.load(Ordering::Relaxed)
}

/// Enable or disable the data-parallel paths at runtime.
///
/// A no-op in builds without the `parallel` feature.
pub fn set_parallelism(enabled: bool) {
    PARALLEL_ENABLED.store(enabled, Ordering::Relaxed);
}

/// Map `f` over `0..len`, collecting results in index order.
pub fn map_indexed<U, F>(len: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallelism_enabled() {
        return (0..len).into_par_iter().map(f).collect();
    }
    (0..len).map(f).collect()
}

/// Apply `f` to each chunk of `out` (chunks of `chunk_len`), passing the
/// chunk index. Chunk boundaries are identical in both execution modes.
pub fn for_each_chunk_mut<T, F>(out: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    debug_assert!(chunk_len > 0);
    #[cfg(feature = "parallel")]
    if parallelism_enabled() {
        out.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
        return;
    }
    for (i, chunk) in out.chunks_mut(chunk_len).enumerate() {
        f(i, chunk);
    }
}

/// Sequential variants used by the bench suite as the comparison baseline.
pub mod seq {
    pub fn map_indexed<U, F>(len: usize, f: F) -> Vec<U>
    where
        F: Fn(usize) -> U,
    {
        (0..len).map(f).collect()
    }

    pub fn for_each_chunk_mut<T, F>(out: &mut [T], chunk_len: usize, f: F)
    where
        F: Fn(usize, &mut [T]),
    {
        for (i, chunk) in out.chunks_mut(chunk_len).enumerate() {
            f(i, chunk);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let n = 257;
        let f = |i: usize| (i as f64).sqrt() * 1.7 + (i as f64 % 13.0);
        set_parallelism(true);
        let a = map_indexed(n, f);
        set_parallelism(false);
        let b = map_indexed(n, f);
        set_parallelism(true);
        let c = seq::map_indexed(n, f);
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn chunked_writes_cover_everything() {
        let mut out = vec![0u32; 10];
        for_each_chunk_mut(&mut out, 3, |i, chunk| {
            for v in chunk.iter_mut() {
                *v = i as u32 + 1;
            }
        });
        assert_eq!(out, vec![1, 1, 1, 2, 2, 2, 3, 3, 3, 4]);
    }
}
