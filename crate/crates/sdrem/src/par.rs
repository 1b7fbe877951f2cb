//! Thin switch between rayon and sequential execution.
//!
//! All parallel loops in this crate draw from per-unit RNG substreams, so the
//! sequential fallback produces bit-identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, preserving index order in the output.
#[cfg(feature = "parallel")]
pub fn map_indexed<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F: Fn(usize) -> T>(n: usize, f: F) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Map `f` over a slice, preserving order.
#[cfg(feature = "parallel")]
pub fn map_slice<S: Sync, T: Send, F: Fn(usize, &S) -> T + Sync + Send>(
    items: &[S],
    f: F,
) -> Vec<T> {
    items.par_iter().enumerate().map(|(i, s)| f(i, s)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_slice<S, T, F: Fn(usize, &S) -> T>(items: &[S], f: F) -> Vec<T> {
    items.iter().enumerate().map(|(i, s)| f(i, s)).collect()
}

/// Run `f` inside a thread pool with `n_threads` workers. With the
/// `parallel` feature disabled (or `n_threads == 0`), runs `f` directly.
#[cfg(feature = "parallel")]
pub fn with_threads<T: Send, F: FnOnce() -> T + Send>(n_threads: usize, f: F) -> T {
    if n_threads == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n_threads)
        .build()
        .expect("failed to build thread pool");
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<T, F: FnOnce() -> T>(_n_threads: usize, f: F) -> T {
    f()
}
