//! Operation tracing. A sink installed on the transport observes every RMA
//! transfer, remote atomic, notification, and lock protocol event. Atomic
//! events carry a global sequence number assigned while the per-region
//! atomic serialization is held, so the trace order over one location is the
//! linearization order.

use std::sync::{Arc, Mutex};

use crate::transport::RegionId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmaKind {
    Put,
    Get,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomicKind {
    FetchStore,
    CompareSwap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NotifyDir {
    Send,
    Recv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LockPhase {
    AcquireStart,
    Queued,
    Acquired,
    Released,
}

#[derive(Debug, Clone)]
pub enum TraceEvent {
    Rma {
        kind: RmaKind,
        origin: u32,
        region: RegionId,
        target_rank: u32,
        disp: u64,
        bytes: u64,
        at_ns: u64,
    },
    Atomic {
        kind: AtomicKind,
        origin: u32,
        region: RegionId,
        target_rank: u32,
        disp: u64,
        observed: u64,
        stored: Option<u64>,
        seq: u64,
        at_ns: u64,
    },
    Notify {
        dir: NotifyDir,
        unit: u32,
        peer: u32,
        tag: u64,
        at_ns: u64,
    },
    Lock {
        phase: LockPhase,
        unit: u32,
        team: u32,
        tag: u64,
        at_ns: u64,
    },
}

pub type TraceSink = Arc<dyn Fn(&TraceEvent) + Send + Sync + 'static>;

/// A sink that appends every event to a shared vector; handy in tests.
pub fn recording_sink() -> (TraceSink, Arc<Mutex<Vec<TraceEvent>>>) {
    let log = Arc::new(Mutex::new(Vec::new()));
    let sink_log = log.clone();
    let sink: TraceSink = Arc::new(move |ev: &TraceEvent| {
        sink_log.lock().unwrap().push(ev.clone());
    });
    (sink, log)
}

/// A sink that writes one line per event to stderr.
pub fn stderr_sink() -> TraceSink {
    Arc::new(|ev: &TraceEvent| eprintln!("[trace] {ev:?}"))
}
