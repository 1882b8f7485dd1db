//! Per-thread counters used to verify which code paths an operation touches.
//!
//! Counters are thread-local so concurrent tests do not observe each other.

use std::cell::Cell;

thread_local! {
    static GRAPH_BUILDS: Cell<u64> = const { Cell::new(0) };
    static CLEANER_FORWARDS: Cell<u64> = const { Cell::new(0) };
}

/// Snapshot of the counters for the current thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counters {
    pub graph_builds: u64,
    pub cleaner_forwards: u64,
}

pub fn snapshot() -> Counters {
    Counters {
        graph_builds: GRAPH_BUILDS.with(Cell::get),
        cleaner_forwards: CLEANER_FORWARDS.with(Cell::get),
    }
}

pub(crate) fn record_graph_build() {
    GRAPH_BUILDS.with(|c| c.set(c.get() + 1));
}

pub(crate) fn record_cleaner_forward() {
    CLEANER_FORWARDS.with(|c| c.set(c.get() + 1));
}
