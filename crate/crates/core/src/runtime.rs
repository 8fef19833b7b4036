//! Initialization, shutdown, and the SPMD launcher.
//!
//! [`launch`] spawns one thread per unit inside the current process and runs
//! the same entry procedure on each; absolute unit ids are assigned 0..N-1
//! in spawn order. A failing or panicking unit poisons the run so peers
//! blocked in collectives or waits unblock with an error instead of hanging.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::AtomicU32;
use std::sync::Arc;

use crate::coll::CommCtx;
use crate::error::{Error, Result};
use crate::gptr::UnitId;
use crate::memory::{LocalPool, TeamPool};
use crate::team::{TeamId, TeamRecord, TeamRegistry};
use crate::transport::{trace, RegionId, Transport};

const DEFAULT_LOCAL_POOL: u64 = 16 << 20;
const DEFAULT_TEAM_POOL: u64 = 16 << 20;
const DEFAULT_TEAMLIST_CAP: usize = 256;

/// Run-wide configuration. Environment keys `PGAS_LOCAL_POOL_BYTES`,
/// `PGAS_TEAM_POOL_BYTES`, and `PGAS_TEAMLIST_CAP` override the pool and
/// registry defaults; explicit setters override both.
#[derive(Debug, Clone)]
pub struct RuntimeConfig {
    pub unit_count: u32,
    pub local_pool_bytes: u64,
    pub team_pool_bytes: u64,
    pub teamlist_capacity: usize,
    pub trace: bool,
    pub seed: u64,
}

fn env_u64(key: &str, default: u64) -> u64 {
    std::env::var(key)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(default)
}

impl RuntimeConfig {
    pub fn new(unit_count: u32) -> RuntimeConfig {
        RuntimeConfig {
            unit_count,
            local_pool_bytes: env_u64("PGAS_LOCAL_POOL_BYTES", DEFAULT_LOCAL_POOL),
            team_pool_bytes: env_u64("PGAS_TEAM_POOL_BYTES", DEFAULT_TEAM_POOL),
            teamlist_capacity: env_u64("PGAS_TEAMLIST_CAP", DEFAULT_TEAMLIST_CAP as u64) as usize,
            trace: false,
            seed: 0,
        }
    }

    pub fn with_local_pool(mut self, bytes: u64) -> Self {
        self.local_pool_bytes = bytes;
        self
    }

    pub fn with_team_pool(mut self, bytes: u64) -> Self {
        self.team_pool_bytes = bytes;
        self
    }

    pub fn with_teamlist_capacity(mut self, cap: usize) -> Self {
        self.teamlist_capacity = cap;
        self
    }

    pub fn with_trace(mut self, on: bool) -> Self {
        self.trace = on;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.unit_count == 0 {
            return Err(Error::invalid_arg("unit_count must be at least 1"));
        }
        if self.teamlist_capacity == 0 {
            return Err(Error::invalid_arg("teamlist capacity must be at least 1"));
        }
        Ok(())
    }
}

pub(crate) struct GlobalState {
    pub config: RuntimeConfig,
    pub transport: Transport,
    /// Monotone team-id source shared by every unit, so ids are unique for
    /// the whole run even across teams created under disjoint parents.
    pub next_team_id: AtomicU32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Phase {
    Fresh,
    Ready,
    Finished,
}

/// Per-unit handle to the runtime; created by [`launch`], one per unit,
/// confined to its unit.
pub struct UnitContext {
    pub(crate) me: UnitId,
    pub(crate) global: Arc<GlobalState>,
    pub(crate) phase: Phase,
    pub(crate) registry: TeamRegistry,
    pub(crate) local_pool: Option<LocalPool>,
}

impl UnitContext {
    fn new(me: UnitId, global: Arc<GlobalState>) -> UnitContext {
        let cap = global.config.teamlist_capacity;
        UnitContext {
            me,
            global,
            phase: Phase::Fresh,
            registry: TeamRegistry::new(cap),
            local_pool: None,
        }
    }

    pub(crate) fn ensure_ready(&self) -> Result<()> {
        match self.phase {
            Phase::Ready => Ok(()),
            _ => Err(Error::NotInitialized),
        }
    }

    pub(crate) fn transport(&self) -> Transport {
        self.global.transport.clone()
    }

    /// Brings the unit up: reserves the pre-defined global region backing
    /// non-collective allocation, opens its access epoch, and installs the
    /// all-units default team (id 0, slot 0).
    pub fn init(&mut self) -> Result<()> {
        if self.phase != Phase::Fresh {
            return Err(Error::InvalidState("init called twice on one unit".into()));
        }
        let n = self.global.config.unit_count;
        let tr = self.transport();
        let all: Vec<UnitId> = (0..n).map(UnitId).collect();
        tr.region_create(
            self.me,
            RegionId::GLOBAL,
            &all,
            self.global.config.local_pool_bytes,
        )?;
        tr.region_epoch_open(self.me, RegionId::GLOBAL)?;
        self.local_pool = Some(LocalPool::new(self.global.config.local_pool_bytes));

        let group = crate::group::Group::all(n);
        let comm = CommCtx::new(&tr, self.me, TeamId::ALL.raw(), group.members().to_vec())?;
        let record = TeamRecord {
            id: TeamId::ALL.raw(),
            parent: TeamId::ALL.raw(),
            group,
            comm,
            pool: TeamPool::new(self.global.config.team_pool_bytes),
            lock_seq: 0,
        };
        self.registry.insert(record)?;
        self.phase = Phase::Ready;
        Ok(())
    }

    /// Collective shutdown: synchronizes all units, releases every team the
    /// unit still belongs to (newest first), then the default team and the
    /// global region. No unit leaves before every unit has entered.
    pub fn finalize(&mut self) -> Result<()> {
        self.ensure_ready()?;
        let tr = self.transport();
        self.barrier(TeamId::ALL)?;
        for id in self.registry.creation_order_newest_first() {
            self.destroy_team_resources(id)?;
        }
        let mut default = self
            .registry
            .remove(TeamId::ALL.raw())
            .expect("default team present until finalize");
        for region in default.pool.segment_regions_newest_first() {
            tr.region_destroy(self.me, region)?;
        }
        default.comm.destroy(&tr)?;
        tr.region_destroy(self.me, RegionId::GLOBAL)?;
        self.local_pool = None;
        self.phase = Phase::Finished;
        Ok(())
    }

    pub fn my_id(&self) -> UnitId {
        self.me
    }

    /// Number of units in the run; identical at every unit.
    pub fn num_units(&self) -> u32 {
        self.global.config.unit_count
    }

    /// Seed carried by the launch configuration, for deterministic kernels.
    pub fn seed(&self) -> u64 {
        self.global.config.seed
    }
}

/// Spawns `config.unit_count` units, runs `program` on each SPMD-style, and
/// collects the per-unit exit statuses in unit order.
///
/// Any unit failure (error return or panic) poisons the run so the other
/// units drain out, and the aggregated failures are reported. On success the
/// transport is audited: leftover regions, requests, or queued notifications
/// fail the launch.
pub fn launch<F>(config: RuntimeConfig, program: F) -> Result<Vec<i32>>
where
    F: Fn(&mut UnitContext) -> Result<i32> + Send + Sync,
{
    launch_traced(config, None, program)
}

/// [`launch`] with an explicit trace sink observing every transport
/// operation of the run.
pub fn launch_traced<F>(
    config: RuntimeConfig,
    sink: Option<trace::TraceSink>,
    program: F,
) -> Result<Vec<i32>>
where
    F: Fn(&mut UnitContext) -> Result<i32> + Send + Sync,
{
    config.validate()?;
    let transport = Transport::new(config.unit_count);
    if let Some(sink) = sink {
        transport.set_trace(Some(sink));
    } else if config.trace {
        transport.set_trace(Some(trace::stderr_sink()));
    }
    let global = Arc::new(GlobalState {
        transport,
        next_team_id: AtomicU32::new(1),
        config,
    });

    let n = global.config.unit_count;
    let program = &program;
    let results: Vec<std::result::Result<i32, String>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n)
            .map(|i| {
                let global = global.clone();
                scope.spawn(move || {
                    let mut ctx = UnitContext::new(UnitId(i), global.clone());
                    let outcome = catch_unwind(AssertUnwindSafe(|| program(&mut ctx)));
                    match outcome {
                        Ok(Ok(status)) => Ok(status),
                        Ok(Err(err)) => {
                            global.transport.poison();
                            Err(err.to_string())
                        }
                        Err(payload) => {
                            global.transport.poison();
                            Err(panic_message(payload))
                        }
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("unit threads never propagate panics"))
            .collect()
    });

    let mut statuses = Vec::with_capacity(n as usize);
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => statuses.push(s),
            Err(msg) => failures.push(format!("unit {i}: {msg}")),
        }
    }
    if !failures.is_empty() {
        return Err(Error::UnitFailures(failures.join("; ")));
    }

    let tr = &global.transport;
    let (regions, requests, notifies) = (
        tr.live_regions(),
        tr.live_requests(),
        tr.queued_notifications(),
    );
    if regions != 0 || requests != 0 || notifies != 0 {
        return Err(Error::InvalidState(format!(
            "teardown audit failed: {regions} regions, {requests} requests, {notifies} notifications still live"
        )));
    }
    Ok(statuses)
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        format!("panic: {s}")
    } else if let Some(s) = payload.downcast_ref::<String>() {
        format!("panic: {s}")
    } else {
        "panic: <non-string payload>".into()
    }
}
