//! Ordered parallel map over trajectory indices.
//!
//! Results come back in index order and every reduction happens afterwards on
//! the calling thread, so output is identical for any worker count.

use rayon::prelude::*;

/// Worker count from `GLSIM_WORKERS`, if set to a positive integer.
pub fn workers_from_env() -> Option<usize> {
    std::env::var("GLSIM_WORKERS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
}

pub fn map_indexed<T, F>(workers: usize, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        Err(_) => (0..n).map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let a = map_indexed(1, 100, |i| i * i);
        let b = map_indexed(4, 100, |i| i * i);
        assert_eq!(a, b);
        assert_eq!(a[7], 49);
    }
}
