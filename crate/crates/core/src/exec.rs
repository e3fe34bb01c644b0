//! Execution strategy for data-parallel inner loops.
//!
//! The simulator has three embarrassingly parallel hot spots: per-device
//! local training within a round, per-chunk shard poisoning, and batched test
//! evaluation. All of them map an ordered slice of independent work items to
//! an ordered vector of results and reduce sequentially afterwards, so the
//! output is bit-identical whether the map runs on one thread or many.
//!
//! With the `parallel` feature (default) the map fans out over rayon's global
//! pool; without it the same closure runs on a plain iterator.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `items`, preserving input order in the output.
#[cfg(feature = "parallel")]
pub fn ordered_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Maps `f` over `items`, preserving input order in the output.
#[cfg(not(feature = "parallel"))]
pub fn ordered_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Maps `f` over the index range `0..n`, preserving order.
#[cfg(feature = "parallel")]
pub fn ordered_map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Maps `f` over the index range `0..n`, preserving order.
#[cfg(not(feature = "parallel"))]
pub fn ordered_map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}

/// Always-sequential variant, kept for benchmarks that compare the two paths.
pub fn ordered_map_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let items: Vec<u64> = (0..257).collect();
        let par = ordered_map(&items, |x| x.wrapping_mul(0x9e37_79b9) ^ (x >> 3));
        let seq = ordered_map_seq(&items, |x| x.wrapping_mul(0x9e37_79b9) ^ (x >> 3));
        assert_eq!(par, seq);
    }

    #[test]
    fn range_map_preserves_order() {
        let out = ordered_map_range(100, |i| i * i);
        for (i, v) in out.iter().enumerate() {
            assert_eq!(*v, i * i);
        }
    }
}
