//! Order-preserving map over independent items. With the `parallel` feature
//! the parallel mode runs on a dedicated rayon pool of the requested width;
//! without it every mode runs sequentially.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel { width: usize },
}

impl Execution {
    pub fn with_width(width: usize) -> Self {
        if width <= 1 {
            Execution::Sequential
        } else {
            Execution::Parallel { width }
        }
    }

    pub fn width(self) -> usize {
        match self {
            Execution::Sequential => 1,
            Execution::Parallel { width } => width,
        }
    }
}

/// `items.iter().map(f)` with results in input order for every mode.
pub fn map<T, R, F>(items: &[T], exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        Execution::Sequential => items.iter().map(f).collect(),
        Execution::Parallel { width } => parallel_map(items, width, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, R, F>(items: &[T], width: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    match rayon::ThreadPoolBuilder::new().num_threads(width).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(f).collect()),
        Err(e) => {
            log::warn!("could not build a {width}-thread pool ({e}); running sequentially");
            items.iter().map(f).collect()
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, R, F>(items: &[T], _width: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let xs: Vec<u64> = (0..1000).collect();
        let seq = map(&xs, Execution::Sequential, |x| x * x);
        let par = map(&xs, Execution::Parallel { width: 4 }, |x| x * x);
        assert_eq!(seq, par);
    }

    #[test]
    fn width_one_is_sequential() {
        assert_eq!(Execution::with_width(1), Execution::Sequential);
        assert_eq!(Execution::with_width(8).width(), 8);
    }
}
