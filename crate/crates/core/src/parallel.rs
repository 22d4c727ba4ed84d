//! Worker-count control and order-preserving reductions.
//!
//! Drivers parallelize with rayon's indexed iterators, which keep results in
//! index order; all sums then run sequentially so aggregates are bit-identical
//! regardless of thread count.

use rayon::ThreadPoolBuilder;

/// Runs `op` on a dedicated pool of `workers` threads; `0` uses the global pool.
pub fn with_workers<R: Send>(workers: usize, op: impl FnOnce() -> R + Send) -> R {
    if workers == 0 {
        return op();
    }
    match ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(op),
        Err(_) => op(),
    }
}

/// Sample mean and standard error of the mean (0 for fewer than two samples).
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}
