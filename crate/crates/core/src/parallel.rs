//! Data-parallel map over independent tasks.
//!
//! With the `parallel` feature the work runs on a rayon pool; without it the
//! same calls run sequentially in order. Results are always returned in input
//! order, so outputs do not depend on the schedule.

/// How many worker threads to use. `None` means all available cores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Executor {
    pub threads: Option<usize>,
}

impl Executor {
    pub fn new(threads: Option<usize>) -> Self {
        Self { threads: threads.filter(|&t| t > 0) }
    }

    pub fn sequential() -> Self {
        Self { threads: Some(1) }
    }

    /// Applies `f` to every item, in parallel when enabled.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        self.install(|| map_items(items, &f))
    }

    /// Runs `op` inside the configured pool so nested parallel iterators use
    /// the same thread cap.
    pub fn install<R: Send>(&self, op: impl FnOnce() -> R + Send) -> R {
        #[cfg(feature = "parallel")]
        {
            match self.threads {
                Some(1) => op(),
                Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
                    Ok(pool) => pool.install(op),
                    Err(e) => {
                        log::warn!("could not build a {t}-thread pool ({e}); using the global pool");
                        op()
                    }
                },
                None => op(),
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            op()
        }
    }

    pub fn is_parallel(&self) -> bool {
        cfg!(feature = "parallel") && self.threads != Some(1)
    }
}

#[cfg(feature = "parallel")]
fn map_items<T: Sync, R: Send>(items: &[T], f: &(impl Fn(&T) -> R + Sync + Send)) -> Vec<R> {
    use rayon::prelude::*;
    if rayon::current_num_threads() <= 1 {
        return items.iter().map(f).collect();
    }
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_items<T: Sync, R: Send>(items: &[T], f: &(impl Fn(&T) -> R + Sync + Send)) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Parallel map with the default executor.
pub fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    Executor::default().map(items, f)
}
