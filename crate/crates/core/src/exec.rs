//! Execution strategy for the data-parallel inner loops.
//!
//! With the `parallel` feature (default) the parallel strategy runs on the
//! rayon global pool. Without it, [`Execution::Parallel`] silently degrades to
//! sequential iteration so callers never need their own `cfg` switches.
//! Every closure handed to these helpers must be a pure function of its
//! index/element: results are collected in input order, so both strategies
//! produce bit-identical output.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether work will actually be spread across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Maps `f` over a slice, preserving order.
pub fn map_slice<S, T, F>(exec: Execution, items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Maps `f` over a mutable slice; each element is visited by exactly one call.
pub fn map_slice_mut<S, T, F>(exec: Execution, items: &mut [S], f: F) -> Vec<T>
where
    S: Send,
    T: Send,
    F: Fn(&mut S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter_mut().map(f).collect();
    }
    let _ = exec;
    items.iter_mut().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_agree() {
        let seq = map_range(Execution::Sequential, 1000, |i| (i as f64).sqrt());
        let par = map_range(Execution::Parallel, 1000, |i| (i as f64).sqrt());
        assert_eq!(seq, par);

        let mut a: Vec<u32> = (0..64).collect();
        let mut b = a.clone();
        let ra = map_slice_mut(Execution::Sequential, &mut a, |x| {
            *x *= 3;
            *x + 1
        });
        let rb = map_slice_mut(Execution::Parallel, &mut b, |x| {
            *x *= 3;
            *x + 1
        });
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }
}
