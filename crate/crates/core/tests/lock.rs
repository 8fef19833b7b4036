//! Distributed queuing lock behaviors: exclusion, FIFO handoff, quiescence,
//! lifecycle errors.

use std::sync::Mutex;

use pgas_core::transport::trace::{recording_sink, AtomicKind, TraceEvent};
use pgas_core::{launch, Error, Group, RuntimeConfig, TeamId, TeamLock, UnitId};

fn small_config(n: u32) -> RuntimeConfig {
    RuntimeConfig::new(n)
        .with_local_pool(1 << 20)
        .with_team_pool(1 << 20)
}

/// Read-modify-write a shared 8-byte counter without atomics; lost updates
/// appear immediately if mutual exclusion is broken.
fn bump_counter(
    ctx: &mut pgas_core::UnitContext,
    counter: pgas_core::GlobalPtr,
) -> pgas_core::Result<()> {
    let mut buf = [0u8; 8];
    ctx.get_blocking(&mut buf, counter)?;
    let v = u64::from_le_bytes(buf) + 1;
    ctx.put_blocking(counter, &v.to_le_bytes())
}

/// Unit 0 allocates a zeroed counter and broadcasts its pointer in the
/// 128-bit wire encoding.
fn share_counter(ctx: &mut pgas_core::UnitContext) -> pgas_core::Result<pgas_core::GlobalPtr> {
    let mut enc = [0u8; 16];
    if ctx.team_my_id(TeamId::ALL)? == 0 {
        let p = ctx.memalloc(8)?;
        ctx.put_blocking(p, &0u64.to_le_bytes())?;
        enc = p.to_le_bytes();
    }
    ctx.bcast(TeamId::ALL, 0, &mut enc)?;
    Ok(pgas_core::GlobalPtr::from_le_bytes(enc))
}

#[test]
fn init_leaves_tail_and_cells_at_the_sentinel() {
    launch(small_config(3), |ctx| {
        ctx.init()?;
        let mut lock = ctx.team_lock_init(TeamId::ALL)?;
        let (tail, cell) = lock.probe(ctx)?;
        assert_eq!(tail, TeamLock::nil());
        assert_eq!(cell, TeamLock::nil());
        lock.free(ctx)?;
        ctx.finalize()?;
        Ok(0)
    })
    .unwrap();
}

#[test]
fn sole_unit_acquires_immediately_and_release_resets_tail() {
    launch(small_config(2), |ctx| {
        ctx.init()?;
        let mut lock = ctx.team_lock_init(TeamId::ALL)?;
        if ctx.my_id().0 == 0 {
            lock.acquire(ctx)?;
            let (tail, _) = lock.probe(ctx)?;
            assert_eq!(tail, 0, "tail holds the acquirer");
            lock.release(ctx)?;
            let (tail, cell) = lock.probe(ctx)?;
            assert_eq!(tail, TeamLock::nil());
            assert_eq!(cell, TeamLock::nil());
        }
        ctx.barrier(TeamId::ALL)?;
        lock.free(ctx)?;
        ctx.finalize()?;
        Ok(0)
    })
    .unwrap();
}

#[test]
fn two_units_hand_off_in_queue_order() {
    launch(small_config(2), |ctx| {
        ctx.init()?;
        let counter = share_counter(ctx)?;
        let mut lock = ctx.team_lock_init(TeamId::ALL)?;
        for _ in 0..200 {
            lock.acquire(ctx)?;
            bump_counter(ctx, counter)?;
            lock.release(ctx)?;
        }
        ctx.barrier(TeamId::ALL)?;
        if ctx.my_id().0 == 0 {
            let mut buf = [0u8; 8];
            ctx.get_blocking(&mut buf, counter)?;
            assert_eq!(u64::from_le_bytes(buf), 400);
            ctx.memfree(counter)?;
        }
        lock.free(ctx)?;
        ctx.finalize()?;
        Ok(0)
    })
    .unwrap();
}

#[test]
fn release_acquire_ping_pong_terminates() {
    launch(small_config(2), |ctx| {
        ctx.init()?;
        let mut lock = ctx.team_lock_init(TeamId::ALL)?;
        for _ in 0..1000 {
            lock.acquire(ctx)?;
            lock.release(ctx)?;
        }
        ctx.barrier(TeamId::ALL)?;
        let (tail, cell) = lock.probe(ctx)?;
        assert_eq!(
            (tail, cell),
            (TeamLock::nil(), TeamLock::nil()),
            "quiescent"
        );
        lock.free(ctx)?;
        ctx.finalize()?;
        Ok(0)
    })
    .unwrap();
}

#[test]
fn two_locks_on_one_team_are_independent() {
    launch(small_config(2), |ctx| {
        ctx.init()?;
        let mut red = ctx.team_lock_init(TeamId::ALL)?;
        let mut blue = ctx.team_lock_init(TeamId::ALL)?;
        if ctx.my_id().0 == 0 {
            red.acquire(ctx)?;
        }
        ctx.barrier(TeamId::ALL)?;
        if ctx.my_id().0 == 1 {
            // Holding red elsewhere must not block blue.
            blue.acquire(ctx)?;
            blue.release(ctx)?;
        }
        ctx.barrier(TeamId::ALL)?;
        if ctx.my_id().0 == 0 {
            red.release(ctx)?;
        }
        ctx.barrier(TeamId::ALL)?;
        red.free(ctx)?;
        blue.free(ctx)?;
        ctx.finalize()?;
        Ok(0)
    })
    .unwrap();
}

#[test]
fn lock_works_on_subteams() {
    launch(small_config(4), |ctx| {
        ctx.init()?;
        let g = Group::from_members(vec![UnitId(1), UnitId(2), UnitId(3)]);
        let team = ctx.team_create(TeamId::ALL, &g)?;
        if let Some(team) = team {
            let mut lock = ctx.team_lock_init(team)?;
            for _ in 0..50 {
                lock.acquire(ctx)?;
                lock.release(ctx)?;
            }
            ctx.barrier(team)?;
            lock.free(ctx)?;
            ctx.team_destroy(team)?;
        }
        ctx.finalize()?;
        Ok(0)
    })
    .unwrap();
}

#[test]
fn reentrant_acquire_and_bad_release_are_detected() {
    launch(small_config(1), |ctx| {
        ctx.init()?;
        let mut lock = ctx.team_lock_init(TeamId::ALL)?;
        assert!(matches!(lock.release(ctx), Err(Error::InvalidState(_))));
        lock.acquire(ctx)?;
        assert!(matches!(lock.acquire(ctx), Err(Error::InvalidState(_))));
        lock.release(ctx)?;
        lock.free(ctx)?;
        ctx.finalize()?;
        Ok(0)
    })
    .unwrap();
}

#[test]
fn free_while_held_errors_and_freed_locks_reject_use() {
    launch(small_config(2), |ctx| {
        ctx.init()?;
        let mut lock = ctx.team_lock_init(TeamId::ALL)?;
        if ctx.my_id().0 == 1 {
            lock.acquire(ctx)?;
        }
        ctx.barrier(TeamId::ALL)?;
        // Unit 1 still holds: free is a collective error for everyone.
        assert!(matches!(lock.free(ctx), Err(Error::InvalidState(_))));
        ctx.barrier(TeamId::ALL)?;
        if ctx.my_id().0 == 1 {
            lock.release(ctx)?;
        }
        ctx.barrier(TeamId::ALL)?;
        lock.free(ctx)?;
        assert!(matches!(lock.acquire(ctx), Err(Error::InvalidPointer(_))));
        assert!(matches!(lock.probe(ctx), Err(Error::InvalidPointer(_))));
        ctx.finalize()?;
        Ok(0)
    })
    .unwrap();
}

#[test]
fn init_free_cycles_leak_no_pool_space() {
    launch(small_config(2), |ctx| {
        ctx.init()?;
        let before_local = ctx.local_pool_in_use()?;
        let before_pool = ctx.team_pool_usage(TeamId::ALL)?;
        for _ in 0..20 {
            let mut lock = ctx.team_lock_init(TeamId::ALL)?;
            lock.acquire(ctx)?;
            lock.release(ctx)?;
            ctx.barrier(TeamId::ALL)?;
            lock.free(ctx)?;
        }
        assert_eq!(ctx.local_pool_in_use()?, before_local);
        assert_eq!(ctx.team_pool_usage(TeamId::ALL)?, before_pool);
        ctx.finalize()?;
        Ok(0)
    })
    .unwrap();
}

#[test]
fn lock_init_on_destroyed_team_errors() {
    launch(small_config(2), |ctx| {
        ctx.init()?;
        let g = Group::from_members(vec![UnitId(0), UnitId(1)]);
        let team = ctx.team_create(TeamId::ALL, &g)?.unwrap();
        ctx.team_destroy(team)?;
        assert!(matches!(
            ctx.team_lock_init(team),
            Err(Error::InvalidArgument(_))
        ));
        ctx.finalize()?;
        Ok(0)
    })
    .unwrap();
}

/// Contended exclusion plus FIFO: entries into the critical section must
/// follow the order of the atomic swaps on the tail word.
#[test]
fn contended_entries_follow_the_swap_chain() {
    let n = 8u32;
    let rounds = 40u32;
    let (sink, log) = recording_sink();
    let entries: Mutex<Vec<u32>> = Mutex::new(Vec::new());

    let config = small_config(n);
    let entries_ref = &entries;
    let statuses = launch_with_sink(config, sink, |ctx| {
        ctx.init()?;
        let counter = share_counter(ctx)?;
        let mut lock = ctx.team_lock_init(TeamId::ALL)?;
        for _ in 0..rounds {
            lock.acquire(ctx)?;
            entries_ref.lock().unwrap().push(ctx.my_id().0);
            bump_counter(ctx, counter)?;
            lock.release(ctx)?;
        }
        ctx.barrier(TeamId::ALL)?;
        let (tail, cell) = lock.probe(ctx)?;
        assert_eq!(tail, TeamLock::nil());
        assert_eq!(cell, TeamLock::nil());
        if ctx.team_my_id(TeamId::ALL)? == 0 {
            let mut buf = [0u8; 8];
            ctx.get_blocking(&mut buf, counter)?;
            assert_eq!(u64::from_le_bytes(buf), (n * rounds) as u64);
            ctx.memfree(counter)?;
        }
        lock.free(ctx)?;
        ctx.finalize()?;
        Ok(0)
    })
    .unwrap();
    assert_eq!(statuses.len(), n as usize);

    // The trace's fetch-and-store events on the tail word, in sequence
    // order, are the swap chain; skip the init write (a put, not a swap).
    let log = log.lock().unwrap();
    let mut swaps: Vec<(u64, u32)> = log
        .iter()
        .filter_map(|ev| match ev {
            TraceEvent::Atomic {
                kind: AtomicKind::FetchStore,
                origin,
                seq,
                ..
            } => Some((*seq, *origin)),
            _ => None,
        })
        .collect();
    swaps.sort_unstable();
    let swap_order: Vec<u32> = swaps.into_iter().map(|(_, o)| o).collect();
    let entry_order = entries.lock().unwrap().clone();
    assert_eq!(
        entry_order.len(),
        (n * rounds) as usize,
        "every round entered exactly once"
    );
    assert_eq!(entry_order, swap_order, "FIFO: entry order == swap order");
}

/// launch() with a trace sink installed before units start.
fn launch_with_sink<F>(
    config: RuntimeConfig,
    sink: pgas_core::transport::trace::TraceSink,
    program: F,
) -> pgas_core::Result<Vec<i32>>
where
    F: Fn(&mut pgas_core::UnitContext) -> pgas_core::Result<i32> + Send + Sync,
{
    pgas_core::launch_traced(config, Some(sink), program)
}
