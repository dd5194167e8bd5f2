//! Data-parallel execution over independent work items.
//!
//! With the `parallel` feature the map runs on the rayon pool; otherwise
//! (or with [`Exec::Sequential`]) it is a plain iterator. Results keep
//! input order either way, so reductions downstream are deterministic.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

pub fn map<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_preserve_order() {
        let items: Vec<u64> = (0..1000).collect();
        let seq = map(Exec::Sequential, &items, |x| x * x);
        let par = map(Exec::Parallel, &items, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(seq[999], 998001);
    }
}
