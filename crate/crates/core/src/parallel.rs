//! Order-preserving map over an index range.
//!
//! With the `parallel` feature the work runs on a rayon pool, otherwise on
//! the calling thread. Results come back in index order either way, so any
//! fold over them is reproducible.

/// Worker count. `None` means the rayon default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Workers(pub Option<usize>);

impl Workers {
    pub const SEQUENTIAL: Workers = Workers(Some(1));
}

#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(len: usize, workers: Workers, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    match workers.0 {
        Some(1) => (0..len).map(f).collect(),
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(|| (0..len).into_par_iter().map(&f).collect()),
            Err(e) => {
                log::warn!("could not build a {k}-thread pool ({e}); using the global pool");
                (0..len).into_par_iter().map(&f).collect()
            }
        },
        None => (0..len).into_par_iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(len: usize, _workers: Workers, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..len).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        for w in [Workers(None), Workers::SEQUENTIAL, Workers(Some(3))] {
            let v = map_indexed(1000, w, |i| i * i);
            assert!(v.iter().enumerate().all(|(i, x)| *x == i * i));
        }
    }
}
