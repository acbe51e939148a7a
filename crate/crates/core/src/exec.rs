//! Row-parallel execution helpers.
//!
//! Work is always split into fixed-size row chunks, so results do not depend
//! on how many worker threads pick them up. Without the `parallel` feature
//! every policy runs on the calling thread.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Rows handled per work item.
pub const CHUNK_ROWS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    #[default]
    Sequential,
    /// Uses the rayon pool when compiled with the `parallel` feature.
    Parallel,
}

impl Exec {
    pub fn from_threads(threads: usize) -> Self {
        if threads > 1 {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// Sizes the global worker pool. Only the first call has an effect; without
/// the `parallel` feature this does nothing.
pub fn init_threads(threads: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global();
    }
    let _ = threads;
}

/// Calls `f(first_row, rows)` for every chunk of `row_len`-wide rows in `data`.
pub fn for_each_row_chunk<T, F>(exec: Exec, data: &mut [T], row_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if row_len == 0 {
        return;
    }
    let chunk = CHUNK_ROWS * row_len;
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i * CHUNK_ROWS, c));
        return;
    }
    let _ = exec;
    for (i, c) in data.chunks_mut(chunk).enumerate() {
        f(i * CHUNK_ROWS, c);
    }
}

/// Same as [`for_each_row_chunk`] but over two row-aligned buffers.
pub fn for_each_row_chunk2<A, B, F>(exec: Exec, a: &mut [A], a_row: usize, b: &mut [B], b_row: usize, f: F)
where
    A: Send,
    B: Send,
    F: Fn(usize, &mut [A], &mut [B]) + Sync + Send,
{
    if a_row == 0 || b_row == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        a.par_chunks_mut(CHUNK_ROWS * a_row)
            .zip(b.par_chunks_mut(CHUNK_ROWS * b_row))
            .enumerate()
            .for_each(|(i, (ca, cb))| f(i * CHUNK_ROWS, ca, cb));
        return;
    }
    let _ = exec;
    for (i, (ca, cb)) in a
        .chunks_mut(CHUNK_ROWS * a_row)
        .zip(b.chunks_mut(CHUNK_ROWS * b_row))
        .enumerate()
    {
        f(i * CHUNK_ROWS, ca, cb);
    }
}

/// Maps `0..n` to values, preserving order.
pub fn map_indices<R, F>(exec: Exec, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}
