//! Order-preserving parallel map. Results always come back in index order,
//! so output never depends on the worker count.

#[cfg(feature = "parallel")]
mod imp {
    use std::collections::HashMap;
    use std::sync::{Arc, Mutex, OnceLock};

    use rayon::prelude::*;

    fn pool(threads: usize) -> Arc<rayon::ThreadPool> {
        static POOLS: OnceLock<Mutex<HashMap<usize, Arc<rayon::ThreadPool>>>> = OnceLock::new();
        let pools = POOLS.get_or_init(Default::default);
        let mut guard = pools.lock().unwrap_or_else(|e| e.into_inner());
        guard
            .entry(threads)
            .or_insert_with(|| {
                Arc::new(
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(threads)
                        .build()
                        .expect("failed to build worker pool"),
                )
            })
            .clone()
    }

    pub fn map_indexed<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        if threads <= 1 || n <= 1 {
            return (0..n).map(f).collect();
        }
        pool(threads).install(|| (0..n).into_par_iter().map(&f).collect())
    }

    pub fn available() -> usize {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    }

    /// Like `map_indexed` but on whatever pool the caller is running in.
    pub fn map_current<T, F>(n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        if n <= 1 || rayon::current_num_threads() <= 1 {
            return (0..n).map(f).collect();
        }
        (0..n).into_par_iter().map(&f).collect()
    }

    pub fn install<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
        pool(threads).install(f)
    }
}

#[cfg(not(feature = "parallel"))]
mod imp {
    pub fn map_indexed<T, F>(n: usize, _threads: usize, f: F) -> Vec<T>
    where
        F: Fn(usize) -> T,
    {
        (0..n).map(f).collect()
    }

    pub fn available() -> usize {
        1
    }

    pub fn map_current<T, F>(n: usize, f: F) -> Vec<T>
    where
        F: Fn(usize) -> T,
    {
        (0..n).map(f).collect()
    }
}

pub use imp::{available, map_current, map_indexed};

/// Runs `f` with `threads` workers available to nested parallel loops.
#[cfg(feature = "parallel")]
pub fn install<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    imp::install(threads.max(1), f)
}

#[cfg(not(feature = "parallel"))]
pub fn install<R: Send>(_threads: usize, f: impl FnOnce() -> R + Send) -> R {
    f()
}

/// Applies `f(row_index, row)` to every `width`-wide row of `out`, splitting
/// across workers when the job is large. Each row is written by exactly one
/// call, so results do not depend on the split.
pub fn for_each_row(out: &mut [f64], width: usize, work_per_row: usize, f: impl Fn(usize, &mut [f64]) + Sync) {
    if width == 0 {
        return;
    }
    let rows = out.len() / width;
    #[cfg(feature = "parallel")]
    {
        const MIN_TASK_WORK: usize = 1 << 16;
        if rows * work_per_row.max(1) >= 2 * MIN_TASK_WORK && rayon::current_num_threads() > 1 {
            use rayon::prelude::*;
            let rows_per_task = (MIN_TASK_WORK / work_per_row.max(1)).max(1);
            out.par_chunks_mut(rows_per_task * width)
                .enumerate()
                .for_each(|(task, chunk)| {
                    for (j, row) in chunk.chunks_exact_mut(width).enumerate() {
                        f(task * rows_per_task + j, row);
                    }
                });
            return;
        }
    }
    let _ = work_per_row;
    for (i, row) in out.chunks_exact_mut(width).enumerate().take(rows) {
        f(i, row);
    }
}
