//! Data-parallel map helpers.
//!
//! The per-item workloads (per-problem planning, per-sample training
//! gradients, per-problem validation) are independent; results are collected
//! in input order, so parallel and sequential execution produce identical
//! output. With the `parallel` feature disabled everything runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Order-preserving map over a slice.
#[cfg(feature = "parallel")]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Order-preserving map over an index range.
#[cfg(feature = "parallel")]
pub fn map_range<U, F>(count: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..count).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<U, F>(count: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..count).map(f).collect()
}

/// Always-sequential variants, kept callable for benchmarking the parallel
/// speedup against the same code path.
pub fn map_collect_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

pub fn map_range_seq<U, F>(count: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..count).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let items: Vec<u64> = (0..100).collect();
        let f = |x: &u64| x * x + 1;
        assert_eq!(map_collect(&items, f), map_collect_seq(&items, f));
        let g = |i: usize| (i as f64).sqrt();
        assert_eq!(map_range(50, g), map_range_seq(50, g));
    }
}
