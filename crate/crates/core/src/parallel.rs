//! Deterministic parallel reductions over ensemble members.
//!
//! Members are grouped into fixed-size chunks whose boundaries depend only on
//! the member count. Each chunk is folded sequentially, and chunk results are
//! merged strictly in chunk order, so floating-point sums are bit-identical
//! for any rayon thread count.

use rayon::prelude::*;

/// Chunk size used for `len` members.
pub fn chunk_size(len: usize) -> usize {
    (len / 16).clamp(1, 8)
}

pub fn chunk_count(len: usize) -> usize {
    len.div_ceil(chunk_size(len))
}

/// Folds `map(i)` for `i in 0..len` into per-chunk accumulators, then merges
/// them in chunk order into `total`.
///
/// `merge` receives the chunk index so callers can attribute chunk results to
/// batches (used for batch-means standard errors).
pub fn ordered_fold<T, A, Total>(
    len: usize,
    mut total: Total,
    map: impl Fn(usize) -> T + Sync,
    init: impl Fn() -> A + Sync,
    fold: impl Fn(&mut A, usize, T) + Sync,
    mut merge: impl FnMut(&mut Total, usize, A),
) -> Total
where
    T: Send,
    A: Send,
{
    let chunk = chunk_size(len);
    let chunks = chunk_count(len);
    // Waves bound the number of live chunk accumulators.
    let wave = (rayon::current_num_threads() * 2).max(1);
    let mut start = 0;
    while start < chunks {
        let end = (start + wave).min(chunks);
        let results: Vec<A> = (start..end)
            .into_par_iter()
            .map(|c| {
                let mut acc = init();
                let lo = c * chunk;
                let hi = ((c + 1) * chunk).min(len);
                for i in lo..hi {
                    let item = map(i);
                    fold(&mut acc, i, item);
                }
                acc
            })
            .collect();
        for (offset, acc) in results.into_iter().enumerate() {
            merge(&mut total, start + offset, acc);
        }
        start = end;
    }
    total
}

/// Parallel map preserving order.
pub fn ordered_map<T: Send>(len: usize, map: impl Fn(usize) -> T + Sync) -> Vec<T> {
    (0..len).into_par_iter().map(&map).collect()
}

/// Sequential-order sum of `map(i)`; identical across thread counts.
pub fn ordered_sum(len: usize, map: impl Fn(usize) -> f64 + Sync) -> f64 {
    ordered_fold(
        len,
        0.0,
        map,
        || 0.0,
        |acc: &mut f64, _, v| *acc += v,
        |total, _, acc| *total += acc,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_is_thread_count_independent() {
        let f = |i: usize| ((i as f64) * 0.1).sin() * 1e-3 + 1.0 / (i as f64 + 1.0);
        let mut sums = Vec::new();
        for threads in [1, 3, 8] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            sums.push(pool.install(|| ordered_sum(1003, f)));
        }
        assert_eq!(sums[0].to_bits(), sums[1].to_bits());
        assert_eq!(sums[0].to_bits(), sums[2].to_bits());
    }

    #[test]
    fn chunks_cover_all_members() {
        for len in [1, 2, 15, 16, 17, 100, 2000] {
            let seen = ordered_fold(
                len,
                Vec::new(),
                |i| i,
                Vec::new,
                |acc: &mut Vec<usize>, _, i| acc.push(i),
                |total: &mut Vec<usize>, _, acc| total.extend(acc),
            );
            assert_eq!(seen, (0..len).collect::<Vec<_>>());
        }
    }
}
