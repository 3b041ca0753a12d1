//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature enabled, work is spread over the current rayon
//! pool. Without it, or inside a single-worker pool, every helper runs a plain
//! sequential loop. All helpers return results in index order, so callers see
//! the same output regardless of how many workers exist.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many items the scheduling overhead outweighs the gain.
pub const MIN_PARALLEL_LEN: usize = 64;

/// Number of workers the helpers will use from the calling context.
pub fn current_workers() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

#[cfg(feature = "parallel")]
fn go_parallel(len: usize) -> bool {
    len >= MIN_PARALLEL_LEN && current_workers() > 1
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if go_parallel(n) {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// `items.iter().map(f).collect()`, possibly in parallel.
pub fn map_slice<A, T, F>(items: &[A], f: F) -> Vec<T>
where
    A: Sync,
    T: Send,
    F: Fn(&A) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if go_parallel(items.len()) {
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Map every index and fold the results with `reduce`.
///
/// `reduce` must be associative and commutative for the result to be
/// independent of the worker count.
pub fn map_reduce_range<T, M, R>(n: usize, identity: T, map: M, reduce: R) -> T
where
    T: Send + Sync + Clone,
    M: Fn(usize) -> T + Sync + Send,
    R: Fn(T, T) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if go_parallel(n) {
        return (0..n)
            .into_par_iter()
            .map(&map)
            .reduce(|| identity.clone(), &reduce);
    }
    (0..n).map(map).fold(identity, reduce)
}

/// Run `f` with exactly `workers` workers available to the helpers above.
///
/// `workers == 0` uses the ambient pool unchanged.
pub fn with_workers<R, F>(workers: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        if workers == 0 {
            return f();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        f()
    }
}
