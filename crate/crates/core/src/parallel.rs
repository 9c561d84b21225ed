//! Data-parallel helpers with a sequential fallback.

/// Execution strategy for per-agent work.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    /// Process items one after another in index order.
    #[default]
    Sequential,
    /// Use the rayon pool when the `parallel` feature is enabled.
    Parallel,
}

impl Parallelism {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Parallel
    }
}

/// Applies `f` to every item and returns the results in index order.
pub fn map_mut<T, R, F>(items: &mut [T], mode: Parallelism, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(&mut T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter_mut().map(f).collect();
    }
    let _ = mode;
    items.iter_mut().map(f).collect()
}

/// Maps `f` over `0..n` and returns the results in index order.
pub fn map_range<R, F>(n: usize, mode: Parallelism, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}
