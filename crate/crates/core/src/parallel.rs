//! Data-parallel dispatch with a sequential fallback.
//!
//! With the `parallel` feature (default) these helpers fan work out over
//! rayon; without it they run plain loops. Both paths visit work items in
//! a fixed partitioning with sequential inner reductions, so results are
//! bit-identical regardless of thread count.

/// Applies `f` to equally sized mutable chunks of `data`, passing the
/// chunk index. Chunks are independent, so parallel execution is exact.
#[cfg(feature = "parallel")]
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    use rayon::prelude::*;
    data.par_chunks_mut(chunk.max(1))
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    for (i, c) in data.chunks_mut(chunk.max(1)).enumerate() {
        f(i, c);
    }
}

/// Maps `f` over `0..n`, preserving index order in the output.
#[cfg(feature = "parallel")]
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync,
{
    (0..n).map(f).collect()
}

/// Maps `f` over `0..n` on at most `workers` threads (0 = all available).
/// Order of results is preserved either way.
#[cfg(feature = "parallel")]
pub fn map_indexed_with_workers<R, F>(n: usize, workers: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    if workers == 0 {
        return map_indexed(n, f);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    pool.install(|| map_indexed(n, f))
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed_with_workers<R, F>(n: usize, _workers: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_map_matches_sequential() {
        let mut data: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        for_each_chunk_mut(&mut data, 64, |i, c| {
            for v in c.iter_mut() {
                *v = v.sqrt() + i as f64;
            }
        });
        let mut expect: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        for (i, c) in expect.chunks_mut(64).enumerate() {
            for v in c.iter_mut() {
                *v = v.sqrt() + i as f64;
            }
        }
        assert_eq!(data, expect);
    }

    #[test]
    fn map_preserves_order() {
        let out = map_indexed(100, |i| i * i);
        assert_eq!(out, (0..100).map(|i| i * i).collect::<Vec<_>>());
        let out = map_indexed_with_workers(10, 2, |i| i + 1);
        assert_eq!(out, (1..=10).collect::<Vec<_>>());
    }
}
