//! Data-parallel map helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the maps run on the rayon thread
//! pool; without it they run as plain loops. Results are always collected in
//! input order, so downstream reductions are deterministic regardless of
//! thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
pub fn map_slice<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_slice_seq(items, f)
    }
}

/// Sequential map, always available (used by benches to compare back ends).
pub fn map_slice_seq<T, U>(items: &[T], f: impl Fn(&T) -> U) -> Vec<U> {
    items.iter().map(f).collect()
}

/// Maps `f` over indices `0..n`, in parallel when enabled.
pub fn map_indices<U: Send>(n: usize, f: impl Fn(usize) -> U + Sync + Send) -> Vec<U> {
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = map_slice(&xs, |x| x * x);
        let b = map_slice_seq(&xs, |x| x * x);
        assert_eq!(a, b);
    }

    #[test]
    fn index_map_is_ordered() {
        let v = map_indices(100, |i| i + 1);
        assert!(v.windows(2).all(|w| w[0] < w[1]));
    }
}
