//! Replica-parallel execution.
//!
//! Results always come back in replica order, and the first failing replica
//! (by index) is the one reported, so output does not depend on scheduling.
//! Without the `parallel` feature everything runs on the calling thread.

use crate::error::{Error, Result};

/// Runs `f(0..replicas)` and collects the results in replica order.
pub fn map_replicas<T, F>(replicas: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let out = run(replicas, &f);
    out.into_iter().collect()
}

#[cfg(feature = "parallel")]
fn run<T: Send, F: Fn(u64) -> Result<T> + Sync + Send>(replicas: usize, f: &F) -> Vec<Result<T>> {
    use rayon::prelude::*;
    (0..replicas as u64).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn run<T: Send, F: Fn(u64) -> Result<T> + Sync + Send>(replicas: usize, f: &F) -> Vec<Result<T>> {
    (0..replicas as u64).map(f).collect()
}

/// The sequential path regardless of features.
pub fn map_replicas_sequential<T, F: Fn(u64) -> Result<T>>(replicas: usize, f: F) -> Result<Vec<T>> {
    (0..replicas as u64).map(f).collect()
}

/// Runs `job` with at most `threads` workers (`None` keeps the global pool).
#[cfg(feature = "parallel")]
pub fn with_threads<R: Send>(threads: Option<usize>, job: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        None => Ok(job()),
        Some(0) => Err(Error::config("threads", "must be >= 1")),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::config("threads", e.to_string()))?;
            Ok(pool.install(job))
        }
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<R: Send>(threads: Option<usize>, job: impl FnOnce() -> R + Send) -> Result<R> {
    if threads == Some(0) {
        return Err(Error::config("threads", "must be >= 1"));
    }
    Ok(job())
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
