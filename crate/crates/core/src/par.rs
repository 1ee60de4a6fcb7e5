//! Data-parallel helpers with a sequential fallback.
//!
//! Work is always split into the same fixed-size chunks and results are
//! returned in chunk order, so any reduction the caller performs over the
//! returned vector is independent of the number of worker threads. With the
//! `parallel` feature disabled the chunks run one after another on the calling
//! thread.

use std::ops::Range;

/// Default number of items per chunk for sample-parallel loops.
pub const SAMPLE_CHUNK: usize = 256;

fn chunk_ranges(len: usize, chunk: usize) -> Vec<Range<usize>> {
    let chunk = chunk.max(1);
    (0..len.div_ceil(chunk))
        .map(|c| c * chunk..((c + 1) * chunk).min(len))
        .collect()
}

/// Applies `f` to consecutive ranges of `0..len`, returning results in range
/// order.
#[cfg(feature = "parallel")]
pub fn map_chunks<T, F>(len: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    use rayon::prelude::*;
    chunk_ranges(len, chunk).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_chunks<T, F>(len: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    map_chunks_sequential(len, chunk, f)
}

/// Sequential reference path with the same chunking.
pub fn map_chunks_sequential<T, F>(len: usize, chunk: usize, f: F) -> Vec<T>
where
    F: Fn(Range<usize>) -> T,
{
    chunk_ranges(len, chunk).into_iter().map(f).collect()
}

/// Parallel map over a slice preserving order.
#[cfg(feature = "parallel")]
pub fn map_slice<I, T, F>(items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_slice<I, T, F>(items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Runs `f` inside a pool capped at `threads` workers (0 = library default).
#[cfg(feature = "parallel")]
pub fn with_threads<T: Send, F: FnOnce() -> T + Send>(threads: usize, f: F) -> T {
    if threads == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<T: Send, F: FnOnce() -> T + Send>(_threads: usize, f: F) -> T {
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range_in_order() {
        let r = chunk_ranges(10, 4);
        assert_eq!(r, vec![0..4, 4..8, 8..10]);
        assert!(chunk_ranges(0, 4).is_empty());
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let f = |r: Range<usize>| r.map(|i| (i * i) as u64).sum::<u64>();
        assert_eq!(map_chunks(1000, 37, f), map_chunks_sequential(1000, 37, f));
    }
}
