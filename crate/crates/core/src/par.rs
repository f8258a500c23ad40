//! Thin data-parallel helpers with a sequential fallback.
//!
//! Every reduction here uses a fixed chunk decomposition and combines the
//! per-chunk partials in chunk order, so results are bit-identical whether
//! the `parallel` feature is on or off and regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length (in elements) for deterministic reductions.
pub const REDUCE_CHUNK: usize = 4096;

/// Maps `f` over `0..n` and collects the results in index order.
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
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

/// Runs `f` on each equal-length chunk of `data`; `f` receives the chunk index.
/// `data.len()` must be a multiple of `chunk_len`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    debug_assert_eq!(data.len() % chunk_len.max(1), 0);
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_exact_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_exact_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
}

/// Deterministic chunked sum: partials are computed per fixed-size chunk
/// (possibly in parallel) and added in chunk order.
pub fn sum_chunks<F>(n: usize, f: F) -> f64
where
    F: Fn(usize, usize) -> f64 + Sync + Send,
{
    if n == 0 {
        return 0.0;
    }
    let chunks = n.div_ceil(REDUCE_CHUNK);
    let partials = map_collect(chunks, |ci| {
        let lo = ci * REDUCE_CHUNK;
        let hi = (lo + REDUCE_CHUNK).min(n);
        f(lo, hi)
    });
    partials.into_iter().sum()
}
