//! The one-sided communication substrate: exposed memory regions with
//! per-origin shared access epochs, non-blocking put/get with request
//! handles, 64-bit remote atomics, and matched zero-size notifications.
//!
//! Units in this transport are concurrently executing contexts inside one
//! address space; a region is a slab of bytes per participating rank. The
//! data movement of a non-blocking transfer is deferred: it runs when the
//! origin waits or tests the request, when the origin closes its access
//! epoch, or when the request handle is dropped, and never at the target, so
//! completion keeps passive-target semantics. Visibility follows the
//! unified model: once a request is complete, the written bytes are
//! immediately visible to local reads at the target.

mod slab;
pub mod trace;

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::gptr::UnitId;
use slab::Slab;
use trace::{AtomicKind, LockPhase, NotifyDir, RmaKind, TraceEvent, TraceSink};

const WAIT_SLICE: Duration = Duration::from_millis(20);

/// Identifies an exposed region. Keys are assigned deterministically by the
/// layers above (same key at every participant of a collective creation).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegionId(u64);

impl RegionId {
    /// The pre-reserved region backing non-collective allocations.
    pub const GLOBAL: RegionId = RegionId(0);

    const KIND_SEGMENT: u64 = 1;
    const KIND_CONTROL: u64 = 2;
    const KIND_SCRATCH: u64 = 3;

    fn compose(kind: u64, team: u32, seq: u32) -> RegionId {
        RegionId(kind << 56 | (team as u64) << 24 | seq as u64)
    }

    /// Region backing one collective allocation of a team.
    pub fn segment(team: u32, seq: u32) -> RegionId {
        RegionId::compose(RegionId::KIND_SEGMENT, team, seq)
    }

    /// A team's word-sized control region.
    pub fn control(team: u32) -> RegionId {
        RegionId::compose(RegionId::KIND_CONTROL, team, 0)
    }

    /// A team's payload staging region (generation-counted, may be regrown).
    pub fn scratch(team: u32, generation: u32) -> RegionId {
        RegionId::compose(RegionId::KIND_SCRATCH, team, generation)
    }

    pub fn raw(self) -> u64 {
        self.0
    }
}

impl fmt::Debug for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RegionId({:#x})", self.0)
    }
}

/// Progress of a transfer request. This transport completes work on the
/// origin's own progress calls, so requests jump from `Pending` straight to
/// `FullyComplete`; `LocallyComplete` is reserved for substrates whose
/// remote completion is asynchronous.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequestState {
    Pending,
    LocallyComplete,
    FullyComplete,
}

enum ReqOp {
    Put(Vec<u8>),
    Get { len: usize, data: Option<Vec<u8>> },
}

struct ReqRecord {
    origin: u32,
    region: RegionId,
    target_rank: u32,
    disp: u64,
    op: ReqOp,
    executed: bool,
}

struct RegionRecord {
    participants: Vec<UnitId>,
    bytes: u64,
    slabs: Vec<Slab>,
    /// Origin-side access epoch, one flag per participant.
    epoch_open: Vec<AtomicBool>,
    /// Requests issued against this region and not yet executed.
    pending: Mutex<HashSet<u64>>,
    /// Serializes remote atomics so trace sequence numbers match the real
    /// linearization order.
    atomic_gate: Mutex<()>,
}

impl RegionRecord {
    fn rank_of(&self, unit: UnitId) -> Option<u32> {
        self.participants
            .binary_search(&unit)
            .ok()
            .map(|i| i as u32)
    }

    fn check_range(&self, rank: u32, disp: u64, len: u64) -> Result<()> {
        if rank as usize >= self.participants.len() {
            return Err(Error::invalid_arg(format!(
                "rank {rank} outside region of {} participants",
                self.participants.len()
            )));
        }
        if disp.checked_add(len).is_none_or(|end| end > self.bytes) {
            return Err(Error::invalid_arg(format!(
                "displacement {disp}+{len} outside region extent {}",
                self.bytes
            )));
        }
        Ok(())
    }
}

struct Creating {
    participants: Vec<UnitId>,
    bytes: u64,
    arrived: HashSet<u32>,
}

#[derive(Default)]
struct SyncState {
    regions: HashMap<RegionId, Arc<RegionRecord>>,
    creating: HashMap<RegionId, Creating>,
    destroying: HashMap<RegionId, HashSet<u32>>,
    notify: HashMap<(u32, u32, u64), VecDeque<()>>,
    /// Per-channel wakeups so a send rouses only its own receiver, not
    /// every blocked waiter in the run.
    notify_cvs: HashMap<(u32, u32, u64), Arc<Condvar>>,
}

struct Inner {
    n_units: u32,
    sync: Mutex<SyncState>,
    cv: Condvar,
    requests: Mutex<HashMap<u64, ReqRecord>>,
    next_req: AtomicU64,
    atomic_seq: AtomicU64,
    poisoned: AtomicBool,
    started: Instant,
    trace: RwLock<Option<TraceSink>>,
}

/// Handle to the shared transport state; cheap to clone.
#[derive(Clone)]
pub struct Transport {
    inner: Arc<Inner>,
}

/// Handle for one issued transfer. Consumed by `request_wait`; dropping an
/// unwaited request completes and discards it.
pub struct RmaRequest {
    id: u64,
    origin: u32,
    transport: Transport,
    consumed: bool,
}

impl fmt::Debug for RmaRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RmaRequest({})", self.id)
    }
}

impl Drop for RmaRequest {
    fn drop(&mut self) {
        if !self.consumed {
            let _ = self.transport.finish_request(self.origin, self.id);
        }
    }
}

impl Transport {
    pub fn new(n_units: u32) -> Transport {
        Transport {
            inner: Arc::new(Inner {
                n_units,
                sync: Mutex::new(SyncState::default()),
                cv: Condvar::new(),
                requests: Mutex::new(HashMap::new()),
                next_req: AtomicU64::new(1),
                atomic_seq: AtomicU64::new(0),
                poisoned: AtomicBool::new(false),
                started: Instant::now(),
                trace: RwLock::new(None),
            }),
        }
    }

    pub fn n_units(&self) -> u32 {
        self.inner.n_units
    }

    /// Installs (or clears) the trace sink. Atomic events are emitted while
    /// the per-region atomic serialization is held, so sinks must not call
    /// back into the transport.
    pub fn set_trace(&self, sink: Option<TraceSink>) {
        *self.inner.trace.write().unwrap() = sink;
    }

    fn emit(&self, ev: TraceEvent) {
        if let Some(sink) = self.inner.trace.read().unwrap().as_ref() {
            sink(&ev);
        }
    }

    fn now_ns(&self) -> u64 {
        self.inner.started.elapsed().as_nanos() as u64
    }

    /// Marks the run as failed and wakes every blocked waiter.
    pub fn poison(&self) {
        self.inner.poisoned.store(true, Ordering::SeqCst);
        let guard = self.inner.sync.lock().unwrap();
        for cv in guard.notify_cvs.values() {
            cv.notify_all();
        }
        self.inner.cv.notify_all();
    }

    pub fn is_poisoned(&self) -> bool {
        self.inner.poisoned.load(Ordering::SeqCst)
    }

    fn check_poison(&self) -> Result<()> {
        if self.is_poisoned() {
            Err(Error::Poisoned)
        } else {
            Ok(())
        }
    }

    // ------------------------------------------------------------------
    // Regions and epochs
    // ------------------------------------------------------------------

    /// Collective over `participants`: every participant calls with the same
    /// key, member list, and extent; all return once the region exists.
    /// Ranks within the region are positions in the ascending member list.
    pub fn region_create(
        &self,
        origin: UnitId,
        id: RegionId,
        participants: &[UnitId],
        bytes_per_rank: u64,
    ) -> Result<RegionId> {
        if participants.is_empty() || participants.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid_arg(
                "region participants must be non-empty, ascending, unique",
            ));
        }
        if !participants.contains(&origin) {
            return Err(Error::invalid_arg(format!(
                "unit {origin} is not a participant of the region it creates"
            )));
        }
        let mut sync = self.inner.sync.lock().unwrap();
        if sync.regions.contains_key(&id) {
            return Err(Error::invalid_arg(format!("region {id:?} already exists")));
        }
        let entry = sync.creating.entry(id).or_insert_with(|| Creating {
            participants: participants.to_vec(),
            bytes: bytes_per_rank,
            arrived: HashSet::new(),
        });
        if entry.participants != participants || entry.bytes != bytes_per_rank {
            return Err(Error::invalid_arg(
                "mismatched region_create arguments across participants",
            ));
        }
        if !entry.arrived.insert(origin.0) {
            return Err(Error::invalid_arg(format!(
                "unit {origin} arrived twice at region_create"
            )));
        }
        if entry.arrived.len() == participants.len() {
            let creating = sync.creating.remove(&id).unwrap();
            let slabs = creating
                .participants
                .iter()
                .map(|_| Slab::new(bytes_per_rank as usize))
                .collect();
            let record = Arc::new(RegionRecord {
                participants: creating.participants,
                bytes: bytes_per_rank,
                slabs,
                epoch_open: (0..participants.len())
                    .map(|_| AtomicBool::new(false))
                    .collect(),
                pending: Mutex::new(HashSet::new()),
                atomic_gate: Mutex::new(()),
            });
            sync.regions.insert(id, record);
            self.inner.cv.notify_all();
            return Ok(id);
        }
        loop {
            if sync.regions.contains_key(&id) {
                return Ok(id);
            }
            self.check_poison()?;
            let (guard, _) = self.inner.cv.wait_timeout(sync, WAIT_SLICE).unwrap();
            sync = guard;
        }
    }

    fn region(&self, id: RegionId) -> Result<Arc<RegionRecord>> {
        self.inner
            .sync
            .lock()
            .unwrap()
            .regions
            .get(&id)
            .cloned()
            .ok_or_else(|| Error::invalid_arg(format!("unknown region {id:?}")))
    }

    /// Opens the caller's access epoch on the region.
    pub fn region_epoch_open(&self, origin: UnitId, id: RegionId) -> Result<()> {
        let region = self.region(id)?;
        let pos = region
            .rank_of(origin)
            .ok_or_else(|| Error::invalid_arg(format!("unit {origin} not in region {id:?}")))?;
        region.epoch_open[pos as usize].store(true, Ordering::SeqCst);
        Ok(())
    }

    /// Closes the caller's access epoch, first completing every transfer the
    /// caller has issued against the region.
    pub fn region_epoch_close(&self, origin: UnitId, id: RegionId) -> Result<()> {
        let region = self.region(id)?;
        let pos = region
            .rank_of(origin)
            .ok_or_else(|| Error::invalid_arg(format!("unit {origin} not in region {id:?}")))?;
        self.flush_region(&region, Some(origin.0))?;
        region.epoch_open[pos as usize].store(false, Ordering::SeqCst);
        Ok(())
    }

    /// Collective over the region's participants; completes any leftover
    /// transfers and removes the region.
    pub fn region_destroy(&self, origin: UnitId, id: RegionId) -> Result<()> {
        let region = self.region(id)?;
        let pos = region
            .rank_of(origin)
            .ok_or_else(|| Error::invalid_arg(format!("unit {origin} not in region {id:?}")))?;
        self.flush_region(&region, Some(origin.0))?;
        region.epoch_open[pos as usize].store(false, Ordering::SeqCst);

        let mut sync = self.inner.sync.lock().unwrap();
        let arrived = sync.destroying.entry(id).or_default();
        if !arrived.insert(origin.0) {
            return Err(Error::invalid_arg(format!(
                "unit {origin} arrived twice at region_destroy"
            )));
        }
        if arrived.len() == region.participants.len() {
            sync.destroying.remove(&id);
            drop(sync);
            // Any straggler transfer completes while the region is still
            // resolvable; only then does the region disappear.
            self.flush_region(&region, None)?;
            let mut sync = self.inner.sync.lock().unwrap();
            sync.regions.remove(&id);
            self.inner.cv.notify_all();
            return Ok(());
        }
        loop {
            if !sync.regions.contains_key(&id) {
                return Ok(());
            }
            self.check_poison()?;
            let (guard, _) = self.inner.cv.wait_timeout(sync, WAIT_SLICE).unwrap();
            sync = guard;
        }
    }

    // ------------------------------------------------------------------
    // Non-blocking transfers
    // ------------------------------------------------------------------

    #[allow(clippy::too_many_arguments)]
    fn issue(
        &self,
        origin: UnitId,
        id: RegionId,
        target_rank: u32,
        disp: u64,
        op: ReqOp,
        len: u64,
        kind: RmaKind,
    ) -> Result<RmaRequest> {
        let region = self.region(id)?;
        let pos = region
            .rank_of(origin)
            .ok_or_else(|| Error::invalid_arg(format!("unit {origin} not in region {id:?}")))?;
        if !region.epoch_open[pos as usize].load(Ordering::SeqCst) {
            return Err(Error::EpochViolation);
        }
        region.check_range(target_rank, disp, len)?;

        let req_id = self.inner.next_req.fetch_add(1, Ordering::Relaxed);
        let executed = len == 0;
        let mut record = ReqRecord {
            origin: origin.0,
            region: id,
            target_rank,
            disp,
            op,
            executed,
        };
        if executed {
            // Nothing to move; a zero-length get still yields its empty buffer.
            if let ReqOp::Get { data, .. } = &mut record.op {
                *data = Some(Vec::new());
            }
        } else {
            region.pending.lock().unwrap().insert(req_id);
        }
        self.inner.requests.lock().unwrap().insert(req_id, record);
        self.emit(TraceEvent::Rma {
            kind,
            origin: origin.0,
            region: id,
            target_rank,
            disp,
            bytes: len,
            at_ns: self.now_ns(),
        });
        Ok(RmaRequest {
            id: req_id,
            origin: origin.0,
            transport: self.clone(),
            consumed: false,
        })
    }

    /// Starts a put of `src` into `[disp, disp+len)` of `target_rank`'s slab.
    /// The source bytes are captured at issue time.
    pub fn put_nb(
        &self,
        origin: UnitId,
        id: RegionId,
        target_rank: u32,
        disp: u64,
        src: &[u8],
    ) -> Result<RmaRequest> {
        self.issue(
            origin,
            id,
            target_rank,
            disp,
            ReqOp::Put(src.to_vec()),
            src.len() as u64,
            RmaKind::Put,
        )
    }

    /// Starts a get of `len` bytes from `target_rank`; the bytes are
    /// delivered by `request_wait`.
    pub fn get_nb(
        &self,
        origin: UnitId,
        id: RegionId,
        target_rank: u32,
        disp: u64,
        len: usize,
    ) -> Result<RmaRequest> {
        self.issue(
            origin,
            id,
            target_rank,
            disp,
            ReqOp::Get { len, data: None },
            len as u64,
            RmaKind::Get,
        )
    }

    /// Performs the data movement of a pending request.
    fn ensure_executed(&self, req_id: u64) -> Result<()> {
        let mut requests = self.inner.requests.lock().unwrap();
        let record = requests
            .get_mut(&req_id)
            .ok_or_else(|| Error::invalid_arg(format!("unknown request {req_id}")))?;
        if record.executed {
            return Ok(());
        }
        let region = self.region(record.region)?;
        match &mut record.op {
            ReqOp::Put(bytes) => {
                region.slabs[record.target_rank as usize].write(record.disp as usize, bytes);
            }
            ReqOp::Get { len, data } => {
                let mut buf = vec![0u8; *len];
                region.slabs[record.target_rank as usize].read(record.disp as usize, &mut buf);
                *data = Some(buf);
            }
        }
        record.executed = true;
        region.pending.lock().unwrap().remove(&req_id);
        Ok(())
    }

    /// Completes every not-yet-executed request on the region, optionally
    /// restricted to one origin.
    fn flush_region(&self, region: &RegionRecord, origin: Option<u32>) -> Result<()> {
        let ids: Vec<u64> = region.pending.lock().unwrap().iter().copied().collect();
        for req_id in ids {
            if let Some(o) = origin {
                let requests = self.inner.requests.lock().unwrap();
                match requests.get(&req_id) {
                    Some(r) if r.origin == o => {}
                    _ => continue,
                }
            }
            self.ensure_executed(req_id)?;
        }
        Ok(())
    }

    fn take_request(&self, origin: u32, req: &RmaRequest) -> Result<()> {
        if req.origin != origin {
            return Err(Error::invalid_arg(format!(
                "request {} belongs to unit {}, not unit {origin}",
                req.id, req.origin
            )));
        }
        Ok(())
    }

    fn finish_request(&self, origin: u32, req_id: u64) -> Result<Option<Vec<u8>>> {
        self.ensure_executed(req_id)?;
        let mut requests = self.inner.requests.lock().unwrap();
        let record = requests
            .remove(&req_id)
            .ok_or_else(|| Error::invalid_arg(format!("unknown request {req_id}")))?;
        debug_assert_eq!(record.origin, origin);
        match record.op {
            ReqOp::Put(_) => Ok(None),
            ReqOp::Get { data, .. } => Ok(Some(data.expect("executed get has data"))),
        }
    }

    /// Blocks until the request is fully complete (local and target side);
    /// for gets, returns the fetched bytes. Consumes the request.
    pub fn request_wait(&self, origin: UnitId, mut req: RmaRequest) -> Result<Option<Vec<u8>>> {
        self.take_request(origin.0, &req)?;
        req.consumed = true;
        self.finish_request(origin.0, req.id)
    }

    /// Non-blocking completion check. Drives the transfer forward, so in
    /// this transport a test reports fully-complete; the result is sticky.
    pub fn request_test(&self, origin: UnitId, req: &RmaRequest) -> Result<bool> {
        self.take_request(origin.0, req)?;
        self.ensure_executed(req.id)?;
        Ok(true)
    }

    pub fn request_state(&self, req: &RmaRequest) -> RequestState {
        let requests = self.inner.requests.lock().unwrap();
        match requests.get(&req.id) {
            Some(r) if r.executed => RequestState::FullyComplete,
            Some(_) => RequestState::Pending,
            None => RequestState::FullyComplete,
        }
    }

    // ------------------------------------------------------------------
    // Remote atomics
    // ------------------------------------------------------------------

    fn atomic_prologue(
        &self,
        origin: UnitId,
        id: RegionId,
        target_rank: u32,
        disp: u64,
    ) -> Result<Arc<RegionRecord>> {
        let region = self.region(id)?;
        let pos = region
            .rank_of(origin)
            .ok_or_else(|| Error::invalid_arg(format!("unit {origin} not in region {id:?}")))?;
        if !region.epoch_open[pos as usize].load(Ordering::SeqCst) {
            return Err(Error::EpochViolation);
        }
        if !disp.is_multiple_of(8) {
            return Err(Error::invalid_arg(format!(
                "atomic displacement {disp} is not 8-byte aligned"
            )));
        }
        region.check_range(target_rank, disp, 8)?;
        Ok(region)
    }

    /// Atomically swaps the 64-bit word at the target location, returning
    /// the prior value.
    pub fn fetch_and_store(
        &self,
        origin: UnitId,
        id: RegionId,
        target_rank: u32,
        disp: u64,
        value: u64,
    ) -> Result<u64> {
        let region = self.atomic_prologue(origin, id, target_rank, disp)?;
        let gate = region.atomic_gate.lock().unwrap();
        let old = region.slabs[target_rank as usize]
            .word(disp as usize)
            .swap(value, Ordering::SeqCst);
        let seq = self.inner.atomic_seq.fetch_add(1, Ordering::SeqCst);
        self.emit(TraceEvent::Atomic {
            kind: AtomicKind::FetchStore,
            origin: origin.0,
            region: id,
            target_rank,
            disp,
            observed: old,
            stored: Some(value),
            seq,
            at_ns: self.now_ns(),
        });
        drop(gate);
        Ok(old)
    }

    /// Atomically writes `desired` iff the current value equals `expected`;
    /// returns the observed value either way.
    pub fn compare_and_swap(
        &self,
        origin: UnitId,
        id: RegionId,
        target_rank: u32,
        disp: u64,
        expected: u64,
        desired: u64,
    ) -> Result<u64> {
        let region = self.atomic_prologue(origin, id, target_rank, disp)?;
        let gate = region.atomic_gate.lock().unwrap();
        let word = region.slabs[target_rank as usize].word(disp as usize);
        let observed =
            match word.compare_exchange(expected, desired, Ordering::SeqCst, Ordering::SeqCst) {
                Ok(v) => v,
                Err(v) => v,
            };
        let stored = if observed == expected {
            Some(desired)
        } else {
            None
        };
        let seq = self.inner.atomic_seq.fetch_add(1, Ordering::SeqCst);
        self.emit(TraceEvent::Atomic {
            kind: AtomicKind::CompareSwap,
            origin: origin.0,
            region: id,
            target_rank,
            disp,
            observed,
            stored,
            seq,
            at_ns: self.now_ns(),
        });
        drop(gate);
        Ok(observed)
    }

    // ------------------------------------------------------------------
    // Notifications
    // ------------------------------------------------------------------

    /// Posts a zero-size notification on the (origin, target, tag) channel.
    pub fn notify_send(&self, origin: UnitId, target: UnitId, tag: u64) -> Result<()> {
        if target.0 >= self.inner.n_units {
            return Err(Error::invalid_arg(format!("unknown unit {target}")));
        }
        let mut sync = self.inner.sync.lock().unwrap();
        sync.notify
            .entry((origin.0, target.0, tag))
            .or_default()
            .push_back(());
        if let Some(cv) = sync.notify_cvs.get(&(origin.0, target.0, tag)) {
            cv.notify_all();
        }
        drop(sync);
        self.emit(TraceEvent::Notify {
            dir: NotifyDir::Send,
            unit: origin.0,
            peer: target.0,
            tag,
            at_ns: self.now_ns(),
        });
        Ok(())
    }

    /// Blocks until a matching notification from `source` arrives. Channels
    /// are FIFO per (source, target, tag).
    pub fn notify_recv(&self, origin: UnitId, source: UnitId, tag: u64) -> Result<()> {
        if source.0 >= self.inner.n_units {
            return Err(Error::invalid_arg(format!("unknown unit {source}")));
        }
        let key = (source.0, origin.0, tag);
        let mut sync = self.inner.sync.lock().unwrap();
        loop {
            if let Some(q) = sync.notify.get_mut(&key) {
                q.pop_front().expect("notify queues are never left empty");
                if q.is_empty() {
                    sync.notify.remove(&key);
                }
                drop(sync);
                self.emit(TraceEvent::Notify {
                    dir: NotifyDir::Recv,
                    unit: origin.0,
                    peer: source.0,
                    tag,
                    at_ns: self.now_ns(),
                });
                return Ok(());
            }
            self.check_poison()?;
            let cv = sync.notify_cvs.entry(key).or_default().clone();
            let (guard, _) = cv.wait_timeout(sync, WAIT_SLICE).unwrap();
            sync = guard;
        }
    }

    pub(crate) fn emit_lock_event(&self, phase: LockPhase, unit: UnitId, team: u32, tag: u64) {
        self.emit(TraceEvent::Lock {
            phase,
            unit: unit.0,
            team,
            tag,
            at_ns: self.now_ns(),
        });
    }

    // ------------------------------------------------------------------
    // Teardown audit
    // ------------------------------------------------------------------

    pub fn live_regions(&self) -> usize {
        self.inner.sync.lock().unwrap().regions.len()
    }

    pub fn live_requests(&self) -> usize {
        self.inner.requests.lock().unwrap().len()
    }

    pub fn queued_notifications(&self) -> usize {
        self.inner
            .sync
            .lock()
            .unwrap()
            .notify
            .values()
            .map(|q| q.len())
            .sum()
    }
}
