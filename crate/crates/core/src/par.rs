//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the [`Execution::Parallel`] policy
//! fans work out over rayon's global pool. Without it every policy runs
//! sequentially. Results are always collected in index order, so the output
//! is identical regardless of the policy.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How per-element loops (per tet, per cluster, per sample) are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when this policy will actually use worker threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Minimum items per rayon task; tiny loops stay on the calling thread.
const MIN_CHUNK: usize = 32;

/// `(0..len).map(f).collect()` under the given policy.
pub fn map_indexed<T, F>(exec: Execution, len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && len > MIN_CHUNK {
        return (0..len).into_par_iter().with_min_len(MIN_CHUNK).map(f).collect();
    }
    let _ = exec;
    (0..len).map(f).collect()
}

/// Fills `out` chunk by chunk: `f(i, &mut out[i*width..(i+1)*width])`.
pub fn for_each_chunk<T, F>(exec: Execution, out: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    assert!(width > 0 && out.len().is_multiple_of(width));
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && out.len() / width > MIN_CHUNK {
        out.par_chunks_mut(width)
            .with_min_len(MIN_CHUNK)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = exec;
    out.chunks_mut(width).enumerate().for_each(|(i, c)| f(i, c));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policies_agree() {
        let f = |i: usize| (i as f64).sqrt() * 3.0;
        let a = map_indexed(Execution::Sequential, 1000, f);
        let b = map_indexed(Execution::Parallel, 1000, f);
        assert_eq!(a, b);

        let mut x = vec![0.0; 300];
        let mut y = vec![0.0; 300];
        for_each_chunk(Execution::Sequential, &mut x, 3, |i, c| c.fill(i as f64));
        for_each_chunk(Execution::Parallel, &mut y, 3, |i, c| c.fill(i as f64));
        assert_eq!(x, y);
    }
}
