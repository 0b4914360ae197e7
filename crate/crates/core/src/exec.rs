//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) [`Execution::Parallel`] runs on the
//! rayon global pool; without it every mode runs sequentially. Results are
//! always returned in index order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// `(0..n).map(f)` collected in order.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Applies `f` to every element with its index.
pub fn for_each_mut<T, F>(exec: Execution, items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
        return;
    }
    let _ = exec;
    items.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
}

/// Zips two equal-length slices and maps them in order.
pub fn zip_map<A, B, T, F>(exec: Execution, a: &mut [A], b: &[B], f: F) -> Vec<T>
where
    A: Send,
    B: Sync,
    T: Send,
    F: Fn(usize, &mut A, &B) -> T + Sync + Send,
{
    assert_eq!(a.len(), b.len());
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return a
            .par_iter_mut()
            .zip(b.par_iter())
            .enumerate()
            .map(|(i, (x, y))| f(i, x, y))
            .collect();
    }
    let _ = exec;
    a.iter_mut()
        .zip(b.iter())
        .enumerate()
        .map(|(i, (x, y))| f(i, x, y))
        .collect()
}
