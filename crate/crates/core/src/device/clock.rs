//! Per-thread CPU clocks used to drive the simulated device timeline.
//!
//! Durations on the simulated timeline come from the CPU time a piece of work
//! actually consumed, not from wall time, so that the timeline is insensitive to
//! how many host cores back the simulation.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

#[cfg(unix)]
pub fn thread_cpu_ns() -> u64 {
    let mut ts = libc::timespec {
        tv_sec: 0,
        tv_nsec: 0,
    };
    // SAFETY: `ts` is a valid, writable timespec.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return 0;
    }
    ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
}

#[cfg(not(unix))]
pub fn thread_cpu_ns() -> u64 {
    use std::sync::OnceLock;
    use std::time::Instant;
    static EPOCH: OnceLock<Instant> = OnceLock::new();
    EPOCH.get_or_init(Instant::now).elapsed().as_nanos() as u64
}

/// Runs `f` on the calling thread and returns its result with the CPU time spent.
pub fn cpu_timed<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let t0 = thread_cpu_ns();
    let r = f();
    (r, thread_cpu_ns().saturating_sub(t0))
}

/// Applies `f` to every item in parallel on the current rayon pool and returns
/// the busiest lane's CPU time, i.e. the duration the batch would take on a
/// machine with one core per lane.
pub fn par_for_each_timed<T, F>(items: &mut [T], f: F) -> u64
where
    T: Send,
    F: Fn(&mut T) + Sync,
{
    if items.is_empty() {
        return 0;
    }
    let lanes = rayon::current_num_threads().max(1);
    let busy: Vec<AtomicU64> = (0..lanes).map(|_| AtomicU64::new(0)).collect();
    let block = items.len().div_ceil(lanes * 4).max(1);
    items.par_chunks_mut(block).for_each(|blk| {
        let t0 = thread_cpu_ns();
        for it in blk.iter_mut() {
            f(it);
        }
        let dt = thread_cpu_ns().saturating_sub(t0);
        let lane = rayon::current_thread_index().unwrap_or(0) % lanes;
        busy[lane].fetch_add(dt, Ordering::Relaxed);
    });
    busy.iter()
        .map(|b| b.load(Ordering::Relaxed))
        .max()
        .unwrap_or(0)
}
