//! Data-parallel mapping over independent runs (ladder levels, suite rows,
//! stability-map samples). Individual time integrations stay sequential.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// `Parallel` when the crate is built with the `parallel` feature.
    pub fn available(self) -> Self {
        if cfg!(feature = "parallel") {
            self
        } else {
            Self::Sequential
        }
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map_collect<T, R, F>(exec: Execution, items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    match exec.available() {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.into_par_iter().map(f).collect()
        }
        _ => items.into_iter().map(f).collect(),
    }
}
