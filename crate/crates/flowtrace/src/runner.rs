//! Thread-pool trial executor.

use flowtrace_core::engine::TrialExecutor;
use rayon::prelude::*;

/// Runs trials on a dedicated rayon pool. Results come back in trial
/// order, so output is independent of the worker count.
pub struct ParallelExecutor {
    pool: rayon::ThreadPool,
}

impl ParallelExecutor {
    pub fn new(jobs: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
        Ok(ParallelExecutor { pool })
    }

    pub fn jobs(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl TrialExecutor for ParallelExecutor {
    fn map_trials<T, F>(&self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..count).into_par_iter().map(f).collect())
    }
}

/// Worker count when neither `--jobs` nor `FLOWTRACE_JOBS` is given.
pub fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let ex = ParallelExecutor::new(4).unwrap();
        let v = ex.map_trials(1000, |i| i * 2);
        assert_eq!(v, (0..1000).map(|i| i * 2).collect::<Vec<_>>());
    }
}
