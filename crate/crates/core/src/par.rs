//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper produces bit-identical results under both execution modes:
//! work is split into fixed-size chunks whose partial results are merged in
//! index order, so the floating-point summation order never depends on the
//! number of worker threads or on scheduling.

/// How a data-parallel loop is executed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    /// Uses the rayon pool when the `parallel` feature is enabled.
    #[default]
    Parallel,
}

impl Execution {
    /// True when this request will actually fan out across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Maps `f` over `0..n`, returning results in index order.
pub fn map_range<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Maps `f` over a slice, returning results in order.
pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_range(exec, items.len(), |i| f(&items[i]))
}

/// Deterministic chunked reduction over `0..n`.
///
/// Items are grouped into chunks of `chunk` consecutive indices. Each chunk
/// folds into a fresh accumulator from `init`; chunk accumulators are then
/// merged left to right. The result is independent of `exec`.
pub fn chunked_fold<A, I, F, M>(exec: Execution, n: usize, chunk: usize, init: I, fold: F, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, usize) + Sync + Send,
    M: Fn(&mut A, A),
{
    let chunk = chunk.max(1);
    let n_chunks = n.div_ceil(chunk);
    let partials = map_range(exec, n_chunks, |c| {
        let mut acc = init();
        for i in c * chunk..((c + 1) * chunk).min(n) {
            fold(&mut acc, i);
        }
        acc
    });
    let mut iter = partials.into_iter();
    let mut total = iter.next().unwrap_or_else(&init);
    for part in iter {
        merge(&mut total, part);
    }
    total
}

/// Element-wise `dst += src`.
pub fn add_assign(dst: &mut [f64], src: &[f64]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let out = map_range(Execution::Parallel, 100, |i| i * 2);
        assert_eq!(out, (0..100).map(|i| i * 2).collect::<Vec<_>>());
    }

    #[test]
    fn chunked_fold_is_mode_independent() {
        let vals: Vec<f64> = (0..1000).map(|i| 1.0 / (1.0 + i as f64).powf(1.3)).collect();
        let run = |exec| {
            chunked_fold(exec, vals.len(), 7, || 0.0f64, |acc, i| *acc += vals[i], |a, b| *a += b)
        };
        let seq = run(Execution::Sequential);
        let par = run(Execution::Parallel);
        assert_eq!(seq.to_bits(), par.to_bits());
    }

    #[test]
    fn empty_fold_returns_init() {
        let v = chunked_fold(Execution::Parallel, 0, 4, || 5usize, |_, _| {}, |a, b| *a += b);
        assert_eq!(v, 5);
    }
}
