use anyhow::Result;
use rayon::prelude::*;

/// Worker count from a flag value, falling back to the available cores.
pub fn resolve_workers(flag: Option<usize>) -> usize {
    flag.filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Runs independent jobs on a pool of `workers` threads. Results come back
/// in job order.
pub fn run_jobs<J, R, F>(workers: usize, jobs: &[J], f: F) -> Result<Vec<R>>
where
    J: Sync,
    R: Send,
    F: Fn(&J) -> R + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
    Ok(pool.install(|| jobs.par_iter().map(&f).collect()))
}
