//! Thread-pool execution and stage timing for the core pipeline.

use std::time::{Duration, Instant};

use cmfd_core::pipeline::{Executor, Stage, StageObserver};
use rayon::prelude::*;

/// Runs independent jobs on a dedicated rayon pool. Results come back in
/// index order, so output never depends on the thread count.
pub struct ThreadPool {
    pool: rayon::ThreadPool,
}

impl ThreadPool {
    /// `threads == 0` uses one worker per available core.
    pub fn new(threads: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        Ok(Self { pool: rayon::ThreadPoolBuilder::new().num_threads(threads).build()? })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }

    /// Runs `f` inside the pool, so nested rayon calls use its workers.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }
}

impl Executor for ThreadPool {
    fn map<T: Send, F: Fn(usize) -> T + Sync>(&self, len: usize, f: F) -> Vec<T> {
        self.pool.install(|| (0..len).into_par_iter().map(&f).collect())
    }
}

/// Records the wall-clock duration of every stage.
#[derive(Debug, Default)]
pub struct StageTimer {
    started: Option<(Stage, Instant)>,
    pub timings: Vec<(Stage, Duration)>,
}

impl StageObserver for StageTimer {
    fn begin(&mut self, stage: Stage) {
        self.started = Some((stage, Instant::now()));
    }

    fn end(&mut self, stage: Stage) {
        if let Some((s, t)) = self.started.take() {
            debug_assert_eq!(s, stage);
            self.timings.push((stage, t.elapsed()));
        }
    }
}
