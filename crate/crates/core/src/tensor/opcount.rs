//! Multiply-accumulate counter for compute accounting.
//!
//! Every kernel that performs MACs reports them here. Counts are per thread,
//! so a measurement only sees work done on the calling thread.

use std::cell::Cell;

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn record(macs: usize) {
    MACS.with(|c| c.set(c.get() + macs as u64));
}

/// MACs recorded on this thread so far.
pub fn current() -> u64 {
    MACS.with(Cell::get)
}

/// Runs `f` and returns its result with the MACs it performed on this thread.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let before = current();
    let out = f();
    (out, current() - before)
}
