//! Execution mode for the data-parallel kernels.
//!
//! With the `parallel` feature the kernels fan out over rayon's pool; without
//! it, or inside [`with_mode`]`(Mode::Sequential, ..)`, they run on the calling
//! thread. Both paths produce bit-identical results: every parallel kernel is
//! an order-preserving map whose items are computed independently.

use std::cell::Cell;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Parallel,
    Sequential,
}

thread_local! {
    static MODE: Cell<Mode> = const { Cell::new(Mode::Parallel) };
}

/// The mode requested on this thread.
pub fn current() -> Mode {
    MODE.with(Cell::get)
}

/// Whether kernels called from this thread will actually fan out.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && current() == Mode::Parallel
}

/// Run `f` with the kernels on this thread forced into `mode`.
pub fn with_mode<R>(mode: Mode, f: impl FnOnce() -> R) -> R {
    struct Restore(Mode);
    impl Drop for Restore {
        fn drop(&mut self) {
            MODE.with(|m| m.set(self.0));
        }
    }
    let _restore = Restore(MODE.with(|m| m.replace(mode)));
    f()
}

/// `(0..n).map(f).collect()`, in parallel when enabled.
pub(crate) fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Calls `f(i, chunk)` for each consecutive `width`-sized chunk of `buf`.
pub(crate) fn for_each_chunk_mut<T, F>(buf: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        buf.par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    buf.chunks_mut(width).enumerate().for_each(|(i, c)| f(i, c));
}
