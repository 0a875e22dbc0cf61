//! Rayon-backed [`Executor`].

use neurograph_core::exec::Executor;
use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

use crate::error::{Error, Result};

/// Environment variable that caps the worker count.
pub const THREADS_ENV: &str = "NEUROGRAPH_THREADS";

/// Runs independent items on a dedicated thread pool. Results come back in
/// index order, so output does not depend on the thread count.
pub struct RayonExecutor {
    pool: ThreadPool,
}

impl RayonExecutor {
    /// `threads == 0` lets rayon choose.
    pub fn new(threads: usize) -> Result<Self> {
        let pool = ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Invariant(format!("thread pool: {e}")))?;
        Ok(Self { pool })
    }

    /// Honours `NEUROGRAPH_THREADS` when set.
    pub fn from_env() -> Result<Self> {
        Self::new(threads_from_env()?)
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a non-negative integer, got {v:?}"))),
        _ => Ok(0),
    }
}

impl Executor for RayonExecutor {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use neurograph_core::exec::Sequential;

    use super::*;

    #[test]
    fn matches_sequential_order() {
        let ex = RayonExecutor::new(3).unwrap();
        assert_eq!(ex.threads(), 3);
        let f = |i: usize| (i * 7919) % 113;
        assert_eq!(ex.map(500, f), Sequential.map(500, f));
    }
}
