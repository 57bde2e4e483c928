//! Internal parallelism.
//!
//! Operators split their output into disjoint slabs and compute each slab in
//! exactly one task, so results never depend on the number of threads.

use rayon::prelude::*;

/// Environment variable capping worker threads; `0` or unset means automatic.
pub const THREADS_ENV: &str = "LSK_THREADS";

/// Run `f(slab_index, slab)` over consecutive `slab_len` chunks of `out`.
pub(crate) fn for_each_slab<F>(out: &mut [f64], slab_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if slab_len == 0 || out.is_empty() {
        return;
    }
    out.par_chunks_mut(slab_len).enumerate().for_each(|(i, s)| f(i, s));
}

/// Run `f` inside a dedicated pool of `threads` workers (`0` = rayon default).
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("failed to build thread pool")
        .install(f)
}

/// Parse the thread cap from [`THREADS_ENV`].
pub fn threads_from_env() -> Result<usize, String> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if v.trim().is_empty() => Ok(0),
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| format!("{THREADS_ENV} must be a non-negative integer, got {v:?}")),
        Err(_) => Ok(0),
    }
}
