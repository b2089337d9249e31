//! Data-parallel inner loops with a sequential fallback.
//!
//! With the `parallel` feature (default) the indexed variants run on rayon;
//! without it they fall back to plain loops. The `_seq` variants are always
//! sequential so benchmarks can compare both in one build.
//!
//! Reductions are chunked at a fixed width and folded in index order, so
//! results are bit-identical regardless of thread count.

/// Fixed reduction chunk; must not depend on the thread count.
pub const CHUNK: usize = 8192;

#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_indexed_seq(n, f)
}

pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

fn chunk_bounds(n: usize, c: usize) -> (usize, usize) {
    (c * CHUNK, ((c + 1) * CHUNK).min(n))
}

/// Chunked additive reduction; partials are folded in index order so the
/// result is bit-identical to [`fold_indexed_seq`] at any thread count.
pub fn fold_indexed<T, F>(n: usize, zero: T, f: F) -> T
where
    T: Copy + Send + Sync + std::ops::Add<Output = T>,
    F: Fn(usize) -> T + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    let partials = map_indexed(chunks, |c| {
        let (lo, hi) = chunk_bounds(n, c);
        let mut acc = zero;
        for i in lo..hi {
            acc = acc + f(i);
        }
        acc
    });
    partials.into_iter().fold(zero, |a, p| a + p)
}

pub fn fold_indexed_seq<T, F>(n: usize, zero: T, f: F) -> T
where
    T: Copy + std::ops::Add<Output = T>,
    F: Fn(usize) -> T,
{
    let mut acc = zero;
    for c in 0..n.div_ceil(CHUNK) {
        let (lo, hi) = chunk_bounds(n, c);
        let mut part = zero;
        for i in lo..hi {
            part = part + f(i);
        }
        acc = acc + part;
    }
    acc
}

pub fn sum_indexed<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    fold_indexed(n, 0.0, f)
}

pub fn sum_indexed_seq<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64,
{
    fold_indexed_seq(n, 0.0, f)
}

pub fn count_indexed<F>(n: usize, pred: F) -> u64
where
    F: Fn(usize) -> bool + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    let partials = map_indexed(chunks, |c| {
        let (lo, hi) = chunk_bounds(n, c);
        (lo..hi).filter(|&i| pred(i)).count() as u64
    });
    partials.into_iter().sum()
}

pub fn count_indexed_seq<F>(n: usize, pred: F) -> u64
where
    F: Fn(usize) -> bool,
{
    (0..n).filter(|&i| pred(i)).count() as u64
}
