//! Data-parallel map kernels with a sequential fallback.
//!
//! Every batch evaluation in this crate is a *map* over instances followed by
//! a reduction with a fixed shape. The map runs on rayon when the `parallel`
//! feature is enabled and the input is large enough to amortize the fork
//! overhead; the reduction code is shared by both paths, so results are
//! bitwise identical whichever path ran.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Inputs below this length are always mapped sequentially.
const PAR_THRESHOLD: usize = 512;

/// Leaf size of the pairwise summation tree.
const SUM_LEAF: usize = 16;

/// Map `f` over `items`, preserving input order.
pub fn ordered_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if items.len() >= PAR_THRESHOLD {
            return ordered_map_par(items, f);
        }
    }
    ordered_map_seq(items, f)
}

/// Sequential map, always available.
pub fn ordered_map_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Parallel map on the rayon pool. Order of the output matches the input.
#[cfg(feature = "parallel")]
pub fn ordered_map_par<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Map `f` over indices `0..n`, preserving order.
pub fn ordered_map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if n >= 2 {
            // Index sweeps are used for expensive per-cell work (full
            // retrains, experiment cells), so parallelize even small counts.
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Sum with a fixed-shape pairwise tree.
///
/// The tree shape depends only on the input length, never on thread
/// scheduling, so the result is reproducible bit for bit.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= SUM_LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}
