//! Deterministic parallel reductions.
//!
//! Work is cut into fixed-size blocks independent of the thread count; each
//! block is reduced on whatever thread picks it up and the block results are
//! combined sequentially in block order. Results are therefore bit-identical
//! for any pool size.

use std::ops::Range;

use rayon::prelude::*;

pub(crate) const BLOCK: usize = 256;

pub(crate) fn blocked_reduce<T, F, G>(n: usize, map: F, mut combine: G) -> Option<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync,
    G: FnMut(T, T) -> T,
{
    let n_blocks = n.div_ceil(BLOCK);
    let partials: Vec<T> = (0..n_blocks)
        .into_par_iter()
        .map(|b| map(b * BLOCK..((b + 1) * BLOCK).min(n)))
        .collect();
    let mut it = partials.into_iter();
    let first = it.next()?;
    Some(it.fold(first, &mut combine))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduction_is_thread_count_invariant() {
        let xs: Vec<f64> = (0..5000).map(|i| (i as f64 * 0.37).sin() * 1e3).collect();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| blocked_reduce(xs.len(), |r| xs[r].iter().sum::<f64>(), |a, b| a + b))
                .unwrap()
        };
        assert_eq!(run(1).to_bits(), run(4).to_bits());
        assert!(blocked_reduce(0, |_| 1.0, |a, b| a + b).is_none());
    }
}
