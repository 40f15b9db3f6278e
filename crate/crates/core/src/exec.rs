//! Data-parallel map over independent work items (tiles, trajectories, frames).
//!
//! With the `parallel` feature the map runs on rayon; without it, or with a
//! single worker, it runs in order on the calling thread. Results are always
//! returned in input order, so callers see identical output either way.

use std::fmt;
#[cfg(feature = "parallel")]
use std::sync::Arc;

#[cfg_attr(not(feature = "parallel"), allow(unused_imports))]
use crate::error::{Error, Result};

#[derive(Clone)]
enum Inner {
    Sequential,
    #[cfg(feature = "parallel")]
    Global,
    #[cfg(feature = "parallel")]
    Pool(Arc<rayon::ThreadPool>),
}

/// How independent work items are scheduled.
#[derive(Clone)]
pub struct Executor {
    inner: Inner,
}

impl fmt::Debug for Executor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.inner {
            Inner::Sequential => write!(f, "Executor::Sequential"),
            #[cfg(feature = "parallel")]
            Inner::Global => write!(f, "Executor::Global"),
            #[cfg(feature = "parallel")]
            Inner::Pool(p) => write!(f, "Executor::Pool({})", p.current_num_threads()),
        }
    }
}

impl Default for Executor {
    fn default() -> Self {
        Self::parallel()
    }
}

impl Executor {
    pub fn sequential() -> Self {
        Self {
            inner: Inner::Sequential,
        }
    }

    /// Use every core on the global pool; falls back to sequential without the feature.
    pub fn parallel() -> Self {
        #[cfg(feature = "parallel")]
        {
            Self {
                inner: Inner::Global,
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            Self::sequential()
        }
    }

    /// `0` means all cores, `1` means sequential, `n` caps concurrency at `n` threads.
    pub fn with_workers(workers: usize) -> Result<Self> {
        match workers {
            0 => Ok(Self::parallel()),
            1 => Ok(Self::sequential()),
            #[cfg(feature = "parallel")]
            n => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))?;
                Ok(Self {
                    inner: Inner::Pool(Arc::new(pool)),
                })
            }
            #[cfg(not(feature = "parallel"))]
            _ => Ok(Self::sequential()),
        }
    }

    pub fn is_parallel(&self) -> bool {
        !matches!(self.inner, Inner::Sequential)
    }

    /// Apply `f` to every item, preserving order.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        match &self.inner {
            Inner::Sequential => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
            #[cfg(feature = "parallel")]
            Inner::Global => {
                use rayon::prelude::*;
                items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
            }
            #[cfg(feature = "parallel")]
            Inner::Pool(pool) => {
                use rayon::prelude::*;
                pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect())
            }
        }
    }

    /// Fallible map; the first error in input order wins.
    pub fn try_map<T, R, F>(&self, items: &[T], f: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> Result<R> + Sync + Send,
    {
        self.map(items, f).into_iter().collect()
    }

    /// Fill disjoint chunks of `out` in parallel; `f` gets the chunk index and the chunk.
    pub fn for_each_chunk<F>(&self, out: &mut [f64], chunk: usize, f: F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        match &self.inner {
            Inner::Sequential => out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c)),
            #[cfg(feature = "parallel")]
            Inner::Global => {
                use rayon::prelude::*;
                out.par_chunks_mut(chunk)
                    .enumerate()
                    .for_each(|(i, c)| f(i, c))
            }
            #[cfg(feature = "parallel")]
            Inner::Pool(pool) => {
                use rayon::prelude::*;
                pool.install(|| {
                    out.par_chunks_mut(chunk)
                        .enumerate()
                        .for_each(|(i, c)| f(i, c))
                })
            }
        }
    }
}
