//! Instrumented accounting of live tensor bytes.
//!
//! Every tensor buffer reports its size on creation and release. Counters are
//! per thread, so concurrent tests do not disturb each other's measurements;
//! a buffer released on a different thread than the one that created it is
//! charged to the releasing thread.

use std::cell::Cell;

thread_local! {
    static LIVE: Cell<i64> = const { Cell::new(0) };
    static PEAK: Cell<i64> = const { Cell::new(0) };
}

pub(crate) fn on_alloc(bytes: usize) {
    LIVE.with(|live| {
        let now = live.get() + bytes as i64;
        live.set(now);
        PEAK.with(|peak| {
            if now > peak.get() {
                peak.set(now);
            }
        });
    });
}

pub(crate) fn on_free(bytes: usize) {
    LIVE.with(|live| live.set(live.get() - bytes as i64));
}

/// Bytes currently held by live tensors created on this thread.
pub fn live_bytes() -> i64 {
    LIVE.with(Cell::get)
}

/// High-water mark of [`live_bytes`] since the last [`reset_peak`].
pub fn peak_bytes() -> i64 {
    PEAK.with(Cell::get)
}

/// Resets the high-water mark to the current live byte count.
pub fn reset_peak() {
    let now = live_bytes();
    PEAK.with(|peak| peak.set(now));
}

/// Runs `f` and returns its result together with the peak number of bytes
/// allocated above the live count at entry.
pub fn measure_peak<R>(f: impl FnOnce() -> R) -> (R, i64) {
    let outer_peak = peak_bytes();
    let base = live_bytes();
    reset_peak();
    let out = f();
    let delta = peak_bytes() - base;
    PEAK.with(|peak| peak.set(peak.get().max(outer_peak)));
    (out, delta)
}
