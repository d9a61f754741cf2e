//! Batch execution of independent work items.
//!
//! Samplers, optimizer restarts and grid evaluations all reduce to "run N
//! independent closures and collect results by index".  With the `parallel`
//! feature (default) [`map_indexed`] runs on the rayon pool; without it, the
//! sequential path is used.  Results are ordered by index either way, so
//! reductions are deterministic regardless of scheduling.
//!
//! [`map_indexed_seq`] is always available; the criterion bench compares the
//! two on the real workloads.

/// Sequential reference implementation.
pub fn map_indexed_seq<U, F>(count: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U + Sync,
    U: Send,
{
    (0..count).map(f).collect()
}

/// Run `f(0..count)` and collect results in index order, in parallel when
/// the `parallel` feature is enabled.
#[cfg(feature = "parallel")]
pub fn map_indexed<U, F>(count: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U + Sync,
    U: Send,
{
    use rayon::prelude::*;
    (0..count).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<U, F>(count: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U + Sync,
    U: Send,
{
    map_indexed_seq(count, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_in_order() {
        let a = map_indexed(64, |i| i * i);
        let b = map_indexed_seq(64, |i| i * i);
        assert_eq!(a, b);
    }
}
