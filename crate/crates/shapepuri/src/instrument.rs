//! Call counters for the auxiliary-module boundary.
//!
//! Inference must run the bare classifier; these counters let tests
//! assert that evaluation never touches the shape-encoding or
//! de-biasing paths. Counts are per thread, matching the crate's
//! sequential execution model.

use std::cell::Cell;

thread_local! {
    static SEM_PIPELINE_CALLS: Cell<u64> = const { Cell::new(0) };
    static APPLY_GAD_CALLS: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn record_sem_pipeline_call() {
    SEM_PIPELINE_CALLS.with(|c| c.set(c.get() + 1));
}

pub(crate) fn record_apply_gad_call() {
    APPLY_GAD_CALLS.with(|c| c.set(c.get() + 1));
}

/// Shape-encoding pipeline invocations on this thread.
pub fn sem_pipeline_calls() -> u64 {
    SEM_PIPELINE_CALLS.with(Cell::get)
}

/// De-biasing transform invocations on this thread.
pub fn apply_gad_calls() -> u64 {
    APPLY_GAD_CALLS.with(Cell::get)
}
