//! Worker pool abstraction.
//!
//! With the `parallel` feature the work is spread over a dedicated rayon pool;
//! without it (or with a single worker) every call runs inline on the caller's
//! thread. Callers only ever receive results in input order, so any reduction
//! they perform afterwards is independent of the worker count.

use std::fmt;
#[cfg(feature = "parallel")]
use std::sync::Arc;

#[derive(Clone)]
pub struct Workers {
    count: usize,
    #[cfg(feature = "parallel")]
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl fmt::Debug for Workers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Workers")
            .field("count", &self.count)
            .finish()
    }
}

impl Default for Workers {
    fn default() -> Self {
        Self::sequential()
    }
}

impl Workers {
    pub fn sequential() -> Self {
        Workers {
            count: 1,
            #[cfg(feature = "parallel")]
            pool: None,
        }
    }

    /// A pool of `count` workers. Zero means "one per available core".
    pub fn new(count: usize) -> Self {
        let count = if count == 0 {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        } else {
            count
        };
        if count == 1 {
            return Self::sequential();
        }
        #[cfg(feature = "parallel")]
        {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(count)
                .build()
                .ok()
                .map(Arc::new);
            Workers { count, pool }
        }
        #[cfg(not(feature = "parallel"))]
        {
            Workers { count }
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Calls `f(index, item)` for every element, possibly concurrently.
    pub fn for_each_mut<T, F>(&self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            pool.install(|| {
                items
                    .par_iter_mut()
                    .enumerate()
                    .for_each(|(i, item)| f(i, item))
            });
            return;
        }
        for (i, item) in items.iter_mut().enumerate() {
            f(i, item);
        }
    }

    /// Maps `0..n` through `f`, returning results in index order.
    pub fn map_range<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| (0..n).into_par_iter().map(&f).collect());
        }
        (0..n).map(f).collect()
    }
}
