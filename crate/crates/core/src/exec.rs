//! Data-parallel execution with a sequential fallback.
//!
//! With the `parallel` feature (default) the helpers fan out over rayon's
//! current pool; without it they run on the calling thread. Results are
//! always collected in index order so that every downstream reduction is
//! performed in the same order regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Evaluates `f(i)` for `i in 0..n` and returns the results in index order.
#[cfg(feature = "parallel")]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Maps over a slice, preserving order.
#[cfg(feature = "parallel")]
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    F: Fn(&S) -> T,
{
    items.iter().map(f).collect()
}

/// Always-sequential counterpart of [`map_range`].
pub fn map_range_sequential<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Runs `f` inside a pool of `threads` workers. A value of 0 uses the
/// global pool. Without the `parallel` feature this just calls `f`.
#[cfg(feature = "parallel")]
pub fn with_threads<T, F>(threads: usize, f: F) -> T
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    if threads == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<T, F>(_threads: usize, f: F) -> T
where
    F: FnOnce() -> T,
{
    f()
}

/// Number of worker threads the helpers will use right now.
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

/// Pairwise summation over a slice; the tree shape depends only on the
/// length, so the result is reproducible.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}
