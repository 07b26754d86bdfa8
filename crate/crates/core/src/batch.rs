//! Batch execution of isolated simulation points.

/// Maps `f` over `points` in order. With the `parallel` feature and
/// `jobs != Some(1)` the points run on a rayon pool of `jobs` threads (all
/// cores when `None`); results keep input order either way.
pub fn run_batch<T, R, F>(points: &[T], jobs: Option<usize>, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if jobs != Some(1) {
        return run_parallel(points, jobs, f);
    }
    let _ = jobs;
    run_sequential(points, f)
}

pub fn run_sequential<T, R, F>(points: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    points.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn run_parallel<T, R, F>(points: &[T], jobs: Option<usize>, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    match jobs {
        Some(j) => match rayon::ThreadPoolBuilder::new().num_threads(j).build() {
            Ok(pool) => pool.install(|| points.par_iter().map(&f).collect()),
            Err(_) => run_sequential(points, f),
        },
        None => points.par_iter().map(f).collect(),
    }
}
