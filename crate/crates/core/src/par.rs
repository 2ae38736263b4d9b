//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) the helpers dispatch to rayon when
//! called with [`ExecMode::Parallel`]. Without it, every mode runs
//! sequentially. Results are always returned in input order, and callers that
//! reduce floating-point values do so sequentially over that order, so output
//! never depends on the thread count.

use std::sync::atomic::{AtomicU8, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[repr(u8)]
pub enum ExecMode {
    Sequential = 0,
    #[default]
    Parallel = 1,
}

static GLOBAL_MODE: AtomicU8 = AtomicU8::new(1);

/// Mode used by tensor kernels that do not take an explicit mode.
pub fn global_mode() -> ExecMode {
    match GLOBAL_MODE.load(Ordering::Relaxed) {
        0 => ExecMode::Sequential,
        _ => ExecMode::Parallel,
    }
}

pub fn set_global_mode(mode: ExecMode) {
    GLOBAL_MODE.store(mode as u8, Ordering::Relaxed);
}

impl ExecMode {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }
}

/// Maps `f` over `0..n` and collects results in index order.
pub fn map_range<R, F>(mode: ExecMode, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Maps `f` over a slice and collects results in order.
pub fn map_slice<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Applies `f` to each `chunk`-sized mutable chunk along with its index.
pub fn for_each_chunk_mut<T, F>(mode: ExecMode, data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = mode;
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let a = map_range(ExecMode::Sequential, 100, |i| i * i);
        let b = map_range(ExecMode::Parallel, 100, |i| i * i);
        assert_eq!(a, b);
        let mut x = vec![0usize; 40];
        for_each_chunk_mut(ExecMode::Parallel, &mut x, 7, |i, c| c.iter_mut().for_each(|v| *v = i));
        assert_eq!(x[0], 0);
        assert_eq!(x[39], 5);
    }
}
