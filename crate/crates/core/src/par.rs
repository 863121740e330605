//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) these fan work out over the rayon
//! pool; without it they run in order on the calling thread. Output order
//! always follows input order, so results never depend on the worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::Result;

/// Map `f` over `items`, preserving order.
#[cfg(feature = "parallel")]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    seq::map(items, f)
}

/// Fallible map. The reported error is the one at the lowest index, which
/// keeps error messages independent of scheduling.
pub fn try_map<T, R, F>(items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    map(items, f).into_iter().collect()
}

/// Whether this build fans work out across threads.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Always-sequential counterparts, used by the benches and as the fallback.
pub mod seq {
    use crate::Result;

    pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
    where
        F: Fn(&T) -> R,
    {
        items.iter().map(f).collect()
    }

    pub fn try_map<T, R, F>(items: &[T], f: F) -> Result<Vec<R>>
    where
        F: Fn(&T) -> Result<R>,
    {
        items.iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let items: Vec<u64> = (0..1000).collect();
        let out = map(&items, |x| x * x);
        assert_eq!(out, seq::map(&items, |x| x * x));
    }

    #[test]
    fn try_map_reports_lowest_index_error() {
        let items: Vec<usize> = (0..100).collect();
        let err = try_map(&items, |&i| {
            if i % 10 == 7 {
                Err(crate::Error::InvalidArgument(format!("item {i}")))
            } else {
                Ok(i)
            }
        })
        .unwrap_err();
        assert_eq!(err.to_string(), "invalid argument: item 7");
    }
}
