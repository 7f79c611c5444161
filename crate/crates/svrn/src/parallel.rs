//! Deterministic data-parallel primitives.
//!
//! Reductions are chunked with a fixed block size and the per-block partial
//! results are combined sequentially in block order. The combination order is
//! therefore independent of thread count and scheduling, so a run produces
//! bit-identical numbers whether the `parallel` feature is enabled or not.

use std::cell::Cell;
use std::ops::Range;

/// Rows per reduction block. Fixed so that summation order never depends on
/// the number of worker threads.
pub const BLOCK: usize = 1024;

/// Execution mode consulted by the dispatch points in this module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Use the rayon pool when the `parallel` feature is compiled in.
    Parallel,
    /// Stay on the calling thread.
    Serial,
}

thread_local! {
    static MODE: Cell<Mode> = const { Cell::new(Mode::Parallel) };
}

/// Runs `f` with the dispatch mode overridden on the current thread. Results
/// are identical in both modes; this only controls where the work executes.
pub fn with_mode<R>(mode: Mode, f: impl FnOnce() -> R) -> R {
    MODE.with(|m| {
        let prev = m.replace(mode);
        let out = f();
        m.set(prev);
        out
    })
}

#[cfg(feature = "parallel")]
fn parallel_enabled() -> bool {
    MODE.with(|m| m.get()) == Mode::Parallel
}

fn blocks(len: usize) -> Vec<Range<usize>> {
    (0..len.div_ceil(BLOCK))
        .map(|b| b * BLOCK..((b + 1) * BLOCK).min(len))
        .collect()
}

/// Maps each fixed-size block of `0..len` through `map` and folds the partial
/// results in block order. `fold` must be associative over disjoint blocks in
/// exact arithmetic; the fixed ordering takes care of float reproducibility.
pub fn block_reduce<T, M, F>(len: usize, init: T, map: M, mut fold: F) -> T
where
    T: Send,
    M: Fn(Range<usize>) -> T + Sync + Send,
    F: FnMut(T, T) -> T,
{
    let ranges = blocks(len);
    let partials = run_blocks(ranges, &map);
    partials.into_iter().fold(init, &mut fold)
}

#[cfg(feature = "parallel")]
fn run_blocks<T, M>(ranges: Vec<Range<usize>>, map: &M) -> Vec<T>
where
    T: Send,
    M: Fn(Range<usize>) -> T + Sync + Send,
{
    use rayon::prelude::*;
    if parallel_enabled() && ranges.len() > 1 {
        // Indexed collect keeps the partials in block order.
        ranges.into_par_iter().map(map).collect()
    } else {
        ranges.into_iter().map(map).collect()
    }
}

#[cfg(not(feature = "parallel"))]
fn run_blocks<T, M>(ranges: Vec<Range<usize>>, map: &M) -> Vec<T>
where
    T: Send,
    M: Fn(Range<usize>) -> T + Sync + Send,
{
    ranges.into_iter().map(map).collect()
}

/// Applies `f` to each disjoint `chunk`-sized window of `data` (the tail
/// window may be shorter). Windows are independent, so scheduling cannot
/// change the result.
pub fn for_each_chunk_mut<F>(data: &mut [f64], chunk: usize, f: F)
where
    F: Fn(&mut [f64]) + Sync + Send,
{
    assert!(chunk > 0, "chunk size must be positive");
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if parallel_enabled() && data.len() > chunk {
            data.par_chunks_mut(chunk).for_each(f);
            return;
        }
    }
    data.chunks_mut(chunk).for_each(f);
}

/// Runs one closure per item of `items`, returning outputs in item order.
/// Used for embarrassingly parallel sweeps (independent seeded runs).
pub fn map_items<I, T, F>(items: Vec<I>, f: F) -> Vec<T>
where
    I: Send,
    T: Send,
    F: Fn(I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if parallel_enabled() && items.len() > 1 {
            return items.into_par_iter().map(f).collect();
        }
    }
    items.into_iter().map(f).collect()
}
