//! Sample-level data parallelism.
//!
//! With the `parallel` feature, per-sample work is fanned out over the rayon
//! pool; otherwise (or when [`set_schedule`] selects [`Schedule::Sequential`]) it runs
//! on the calling thread. Results always come back in index order, so any
//! reduction performed by the caller is order-fixed and bit-reproducible.

use std::sync::atomic::{AtomicU8, Ordering};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    Parallel,
    Sequential,
}

static MODE: AtomicU8 = AtomicU8::new(0);

/// Process-wide override. Has no effect without the `parallel` feature.
pub fn set_schedule(schedule: Schedule) {
    MODE.store(
        match schedule {
            Schedule::Parallel => 0,
            Schedule::Sequential => 1,
        },
        Ordering::Relaxed,
    );
}

pub fn schedule() -> Schedule {
    if cfg!(feature = "parallel") && MODE.load(Ordering::Relaxed) == 0 {
        Schedule::Parallel
    } else {
        Schedule::Sequential
    }
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if schedule() == Schedule::Parallel && n > 1 {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Run `f` on each mutable chunk of `data` (chunk length `chunk`).
pub fn for_each_chunk<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if schedule() == Schedule::Parallel && data.len() > chunk {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}
