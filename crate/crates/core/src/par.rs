//! Fork-join helpers over disjoint buffer segments.
//!
//! Every parallel kernel in the crate writes one output segment per node and
//! only reads shared data, so results never depend on the scheduling.

use rayon::prelude::*;

/// Splits `buf` into consecutive mutable segments delimited by `bounds`
/// (`bounds[k]..bounds[k + 1]`). `bounds` must be nondecreasing and start at
/// an offset inside `buf`.
pub fn split_segments_mut<'a, T>(buf: &'a mut [T], bounds: &[usize]) -> Vec<&'a mut [T]> {
    let mut out = Vec::with_capacity(bounds.len().saturating_sub(1));
    if bounds.is_empty() {
        return out;
    }
    let (_, mut rest) = buf.split_at_mut(bounds[0]);
    for w in bounds.windows(2) {
        let (seg, tail) = rest.split_at_mut(w[1] - w[0]);
        out.push(seg);
        rest = tail;
    }
    out
}

/// Applies `body(k, seg)` to every segment in parallel.
pub fn for_each_segment<T, F>(segments: Vec<&mut [T]>, body: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    segments
        .into_par_iter()
        .enumerate()
        .with_min_len(8)
        .for_each(|(k, seg)| body(k, seg));
}

/// Applies `body(k, chunk)` to every `size`-long chunk of `buf` in parallel.
pub fn for_each_chunk<T, F>(buf: &mut [T], size: usize, body: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if size == 0 {
        return;
    }
    buf.par_chunks_mut(size)
        .enumerate()
        .with_min_len(8)
        .for_each(|(k, c)| body(k, c));
}
