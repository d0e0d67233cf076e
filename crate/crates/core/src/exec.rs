//! Sequential / parallel execution switch for batch loops.

/// How a batch loop is executed.
///
/// `Parallel` uses the rayon global pool (or the pool the caller installed).
/// Without the `parallel` feature it silently runs sequentially, so callers
/// never need to gate on the feature themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when this build can actually run loops in parallel.
    pub fn is_parallel_available() -> bool {
        cfg!(feature = "parallel")
    }

    /// Order-preserving map over a slice.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }

    /// Order-preserving map on a dedicated pool of at most `threads` workers.
    /// Used for fan-out where each item blocks on I/O.
    #[cfg_attr(not(feature = "parallel"), allow(unused_variables))]
    pub fn map_bounded<T, R, F>(self, items: &[T], threads: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel if threads > 1 => {
                match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                    Ok(pool) => pool.install(|| self.map(items, f)),
                    Err(e) => {
                        log::warn!("could not build a {threads}-thread pool ({e}); running sequentially");
                        Execution::Sequential.map(items, f)
                    }
                }
            }
            _ => Execution::Sequential.map(items, f),
        }
    }

    /// Map every item then fold the results with an associative `merge`.
    pub fn map_reduce<T, R, F, M>(self, items: &[T], identity: R, f: F, merge: M) -> R
    where
        T: Sync,
        R: Send + Sync + Clone,
        F: Fn(&T) -> R + Sync + Send,
        M: Fn(R, R) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                items
                    .par_iter()
                    .map(f)
                    .reduce(|| identity.clone(), &merge)
            }
            _ => items.iter().map(f).fold(identity, merge),
        }
    }
}
