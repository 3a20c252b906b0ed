//! Chunked data parallelism with a fixed, thread-count-independent reduction
//! order. Without the `parallel` feature every call runs sequentially.

use std::ops::Range;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parallelism {
    Sequential,
    #[default]
    Rayon,
}

impl Parallelism {
    /// Whether work will actually be spread over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Rayon
    }
}

fn chunks(n: usize, chunk: usize) -> Vec<Range<usize>> {
    let chunk = chunk.max(1);
    (0..n.div_ceil(chunk)).map(|c| c * chunk..((c + 1) * chunk).min(n)).collect()
}

/// Applies `f` to consecutive ranges of `0..n` and returns the results in
/// range order, whatever the scheduling.
pub fn map_chunks<T, F>(par: Parallelism, n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let ranges = chunks(n, chunk);
    #[cfg(feature = "parallel")]
    if par.is_parallel() {
        use rayon::prelude::*;
        return ranges.into_par_iter().map(f).collect();
    }
    let _ = par;
    ranges.into_iter().map(f).collect()
}

/// Applies `f` to each index, preserving order.
pub fn map_indices<T, F>(par: Parallelism, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if par.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = par;
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_results_are_ordered_and_identical() {
        let f = |r: Range<usize>| r.map(|i| (i as f64).sqrt()).sum::<f64>();
        let a = map_chunks(Parallelism::Rayon, 10_007, 64, f);
        let b = map_chunks(Parallelism::Sequential, 10_007, 64, f);
        assert_eq!(a.len(), 157);
        assert_eq!(a, b);
        assert!(map_chunks(Parallelism::Rayon, 0, 8, f).is_empty());
        assert_eq!(map_indices(Parallelism::Rayon, 5, |i| i * i), vec![0, 1, 4, 9, 16]);
    }
}
