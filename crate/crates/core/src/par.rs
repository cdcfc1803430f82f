//! Row-parallel sweeps with a sequential fallback.
//!
//! Every sweep hands each output row to exactly one closure call and keeps
//! all reductions inside that call, so results are bit-identical whichever
//! path runs. The rayon path is compiled only with the `parallel` feature
//! and can be switched off at runtime with [`set_parallel`].

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

static PARALLEL: AtomicBool = AtomicBool::new(cfg!(feature = "parallel"));

/// Enables or disables the rayon path. Has no effect without the
/// `parallel` feature.
pub fn set_parallel(on: bool) {
    PARALLEL.store(on && cfg!(feature = "parallel"), Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    PARALLEL.load(Ordering::Relaxed)
}

/// Calls `f(row_index, row)` for every `row_len`-sized chunk of `out` and
/// returns the sum of the per-row work counts `f` reports.
pub fn map_rows<F>(out: &mut [f64], row_len: usize, f: F) -> u64
where
    F: Fn(usize, &mut [f64]) -> u64 + Sync + Send,
{
    if row_len == 0 {
        return 0;
    }
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        return out
            .par_chunks_mut(row_len)
            .enumerate()
            .map(|(i, row)| f(i, row))
            .sum();
    }
    out.chunks_mut(row_len)
        .enumerate()
        .map(|(i, row)| f(i, row))
        .sum()
}

/// Like [`map_rows`] but over variable-length row segments given by
/// `offsets` (CSR style). Segment `i` is `out[offsets[i]*w..offsets[i+1]*w]`.
pub fn map_segments<F>(out: &mut [f64], offsets: &[usize], width: usize, f: F) -> u64
where
    F: Fn(usize, &mut [f64]) -> u64 + Sync + Send,
{
    let n = offsets.len().saturating_sub(1);
    let mut segments: Vec<&mut [f64]> = Vec::with_capacity(n);
    let mut rest = out;
    for i in 0..n {
        let len = (offsets[i + 1] - offsets[i]) * width;
        let (head, tail) = rest.split_at_mut(len);
        segments.push(head);
        rest = tail;
    }
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        return segments
            .into_par_iter()
            .enumerate()
            .map(|(i, seg)| f(i, seg))
            .sum();
    }
    segments
        .into_iter()
        .enumerate()
        .map(|(i, seg)| f(i, seg))
        .sum()
}

/// Maps `0..n` to a vector, in parallel when enabled. Output order is
/// always index order.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}
