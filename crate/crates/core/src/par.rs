//! Thin wrappers that fan work out over rayon when the `parallel` feature is
//! on and fall back to plain iterators otherwise (the wasm demo build).
//!
//! Every helper produces output in index order, so results never depend on
//! the number of worker threads.

use std::ops::Range;

/// Evaluates `f` for every index in `0..n`, in parallel when available.
pub(crate) fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Splits `0..n` into contiguous blocks of `block` indices and concatenates the
/// per-block outputs in order. Lets a worker carry state across neighbouring
/// indices (warm starts) without making the result order dependent.
pub(crate) fn map_blocks<T, F>(n: usize, block: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> Vec<T> + Sync + Send,
{
    let block = block.max(1);
    let blocks = n.div_ceil(block);
    let parts = map_indices(blocks, |b| f(b * block..((b + 1) * block).min(n)));
    let mut out = Vec::with_capacity(n);
    for part in parts {
        out.extend(part);
    }
    out
}
