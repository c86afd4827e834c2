//! Order-preserving fan-out over independent work items.
//!
//! With the `parallel` feature (on by default) items are spread over a rayon
//! pool of at most `workers` threads; without it, or with `workers <= 1`,
//! they run one after another on the calling thread. Either way the output
//! is in input order, so results never depend on scheduling.

/// Map `f` over `items`, keeping input order.
pub fn map_ordered<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if workers > 1 && items.len() > 1 {
            use rayon::prelude::*;
            let run = || items.par_iter().map(&f).collect();
            return match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
                Ok(pool) => pool.install(run),
                Err(e) => {
                    log::warn!("cannot build a {workers}-thread pool ({e}); using the global one");
                    run()
                }
            };
        }
    }
    let _ = workers;
    items.iter().map(f).collect()
}

/// Whether [`map_ordered`] can actually run in parallel in this build.
pub const fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}

/// A sensible default worker count for this machine.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_and_single() {
        let empty: Vec<u32> = vec![];
        assert!(map_ordered(&empty, 4, |x| x * 2).is_empty());
        assert_eq!(map_ordered(&[3], 4, |x| x * 2), vec![6]);
    }

    proptest! {
        #[test]
        fn order_matches_sequential(items in proptest::collection::vec(any::<u32>(), 0..200), workers in 1usize..8) {
            let seq: Vec<u64> = items.iter().map(|x| *x as u64 * 3 + 1).collect();
            prop_assert_eq!(map_ordered(&items, workers, |x| *x as u64 * 3 + 1), seq);
        }
    }
}
