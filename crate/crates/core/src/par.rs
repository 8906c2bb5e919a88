//! Data-parallel map helpers.
//!
//! With the `parallel` feature (default) work is spread over the rayon
//! thread pool. Without it, or when [`Execution::Sequential`] is requested,
//! the same closures run in order on the calling thread. Results are always
//! returned in index order, so both paths produce identical output.

/// How a batch of independent jobs should be executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when this build can actually run jobs concurrently.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

/// Evaluates `f(0..n)` and collects results in index order.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Applies `f` to every element of `items` in place.
pub fn for_each_mut<T, F>(exec: Execution, items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter_mut().enumerate().for_each(|(i, item)| f(i, item));
        }
        _ => items.iter_mut().enumerate().for_each(|(i, item)| f(i, item)),
    }
}

/// Maps every element of `items` mutably, collecting results in order.
pub fn map_mut<T, R, F>(exec: Execution, items: &mut [T], f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, &mut T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter_mut().enumerate().map(|(i, item)| f(i, item)).collect()
        }
        _ => items.iter_mut().enumerate().map(|(i, item)| f(i, item)).collect(),
    }
}

/// Runs two closures, concurrently when possible.
pub fn join<A, B, RA, RB>(exec: Execution, a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => rayon::join(a, b),
        _ => (a(), b()),
    }
}
