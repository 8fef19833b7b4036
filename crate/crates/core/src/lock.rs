//! The list-based distributed queuing lock.
//!
//! State per lock: a `tail` word in the non-collective global segment of the
//! team's relative unit 0, holding the absolute id of the last unit in the
//! waiting queue (or the empty sentinel), and one aligned collective `cell`
//! word per member, holding that member's successor (or the sentinel).
//!
//! Acquire swaps the caller's id into `tail` atomically; a sentinel answer
//! means the lock was free. Otherwise the caller registers itself in its
//! predecessor's cell with an aligned 8-byte put and blocks on a zero-size
//! notification from the predecessor. Release compare-and-swaps `tail` from
//! the caller's id back to the sentinel; if another unit got there first the
//! releaser spins on its own cell until the successor registered, notifies
//! it, and clears the cell. Acquisition order is exactly the order of the
//! swaps on `tail`, so the queue is FIFO.

use crate::coll::{tag, SPACE_LOCK};
use crate::error::{Error, Result};
use crate::gptr::{GlobalPtr, UnitId};
use crate::runtime::UnitContext;
use crate::team::TeamId;
use crate::transport::trace::LockPhase;

/// Sentinel stored in `tail` and the cells: no unit.
const NIL: u64 = u64::MAX;

/// One distributed lock over a team. Multiple independent locks per team are
/// supported; methods are called only by the owning unit.
pub struct TeamLock {
    team: TeamId,
    tag: u64,
    tail: GlobalPtr,
    cells: GlobalPtr,
    held: bool,
    freed: bool,
}

impl TeamLock {
    fn ensure_live(&self) -> Result<()> {
        if self.freed {
            Err(Error::invalid_ptr("lock was freed"))
        } else {
            Ok(())
        }
    }

    pub fn team(&self) -> TeamId {
        self.team
    }

    pub fn is_held(&self) -> bool {
        self.held
    }

    fn read_word(&self, ctx: &UnitContext, ptr: GlobalPtr) -> Result<u64> {
        let mut buf = [0u8; 8];
        ctx.get_blocking(&mut buf, ptr)?;
        Ok(u64::from_le_bytes(buf))
    }

    fn write_word(&self, ctx: &UnitContext, ptr: GlobalPtr, value: u64) -> Result<()> {
        ctx.put_blocking(ptr, &value.to_le_bytes())
    }

    /// Acquires the lock, blocking behind earlier swappers in FIFO order.
    pub fn acquire(&mut self, ctx: &mut UnitContext) -> Result<()> {
        self.ensure_live()?;
        ctx.ensure_ready()?;
        if self.held {
            return Err(Error::InvalidState(
                "reentrant acquire would deadlock the queue".into(),
            ));
        }
        let tr = ctx.transport();
        let me = ctx.my_id();
        tr.emit_lock_event(LockPhase::AcquireStart, me, self.team.raw(), self.tag);

        let d = ctx.dereference(self.tail, None)?;
        let prev = tr.fetch_and_store(me, d.region, d.target_rank, d.disp, me.0 as u64)?;
        if prev != NIL {
            tr.emit_lock_event(LockPhase::Queued, me, self.team.raw(), self.tag);
            let prev_cell = self.cells.with_unit(UnitId(prev as u32));
            self.write_word(ctx, prev_cell, me.0 as u64)?;
            tr.notify_recv(me, UnitId(prev as u32), self.tag)?;
        }
        self.held = true;
        tr.emit_lock_event(LockPhase::Acquired, me, self.team.raw(), self.tag);
        Ok(())
    }

    /// Releases the lock, handing it to the queued successor if any.
    pub fn release(&mut self, ctx: &mut UnitContext) -> Result<()> {
        self.ensure_live()?;
        ctx.ensure_ready()?;
        if !self.held {
            return Err(Error::InvalidState(
                "release of a lock this unit does not hold".into(),
            ));
        }
        let tr = ctx.transport();
        let me = ctx.my_id();
        let d = ctx.dereference(self.tail, None)?;
        let observed =
            tr.compare_and_swap(me, d.region, d.target_rank, d.disp, me.0 as u64, NIL)?;
        if observed != me.0 as u64 {
            // Someone swapped in behind us; wait for its registration.
            let own_cell = self.cells.with_unit(me);
            let mut spins = 0u32;
            let successor = loop {
                let v = self.read_word(ctx, own_cell)?;
                if v != NIL {
                    break v;
                }
                if tr.is_poisoned() {
                    return Err(Error::Poisoned);
                }
                spins += 1;
                if spins < 64 {
                    std::hint::spin_loop();
                } else {
                    let us = ((spins - 64) / 16).min(8);
                    std::thread::sleep(std::time::Duration::from_micros(1 << us));
                }
            };
            tr.notify_send(me, UnitId(successor as u32), self.tag)?;
            self.write_word(ctx, own_cell, NIL)?;
        }
        self.held = false;
        tr.emit_lock_event(LockPhase::Released, me, self.team.raw(), self.tag);
        Ok(())
    }

    /// Collective over the team: releases the lock's two allocations. The
    /// lock must be free everywhere; a holder anywhere fails the call at
    /// every member (the verdict is agreed collectively, so no member can
    /// desynchronize by erroring early).
    pub fn free(&mut self, ctx: &mut UnitContext) -> Result<()> {
        self.ensure_live()?;
        ctx.ensure_ready()?;
        ctx.barrier(self.team)?;
        let my_rel = ctx.team_my_id(self.team)?;
        let tail_free = if my_rel == 0 {
            self.read_word(ctx, self.tail)? == NIL
        } else {
            true
        };
        let verdict = ctx.lock_verdict(self.team, !self.held && tail_free)?;
        if !verdict {
            return Err(Error::InvalidState("free of a held lock".into()));
        }
        if my_rel == 0 {
            ctx.memfree(self.tail)?;
        }
        ctx.team_memfree(self.team, self.cells)?;
        self.freed = true;
        Ok(())
    }

    /// Tail and own-cell values, for quiescence checks: both are the empty
    /// sentinel when nobody holds or awaits the lock.
    pub fn probe(&self, ctx: &UnitContext) -> Result<(u64, u64)> {
        self.ensure_live()?;
        let tail = self.read_word(ctx, self.tail)?;
        let cell = self.read_word(ctx, self.cells.with_unit(ctx.my_id()))?;
        Ok((tail, cell))
    }

    /// The sentinel value stored in an empty tail or cell.
    pub fn nil() -> u64 {
        NIL
    }
}

impl UnitContext {
    /// Collective over `team`: builds one lock. The tail word is allocated
    /// from the non-collective segment of the member with relative id 0;
    /// the cells come from one aligned collective allocation; everything
    /// starts at the empty sentinel.
    pub fn team_lock_init(&mut self, team: TeamId) -> Result<TeamLock> {
        self.ensure_ready()?;
        let tr = self.transport();
        let me = self.me;
        let my_rel = {
            let record = self
                .registry
                .get_mut(team.raw())
                .ok_or_else(|| Error::invalid_arg(format!("unknown or destroyed team {team}")))?;
            let seq = record.lock_seq;
            record.lock_seq += 1;
            record
                .group
                .rank_of(me)
                .map(|rel| (rel, seq))
                .ok_or(Error::NotAMember(team.raw()))?
        };
        let (my_rel, lock_seq) = my_rel;
        let lock_tag = tag(team.raw(), SPACE_LOCK, lock_seq);

        let mut tail_bits = [0u64; 2];
        if my_rel == 0 {
            let tail = self.memalloc(8)?;
            self.put_blocking(tail, &NIL.to_le_bytes())?;
            let bits = tail.to_bits();
            tail_bits = [bits as u64, (bits >> 64) as u64];
        }
        {
            let record = self.registry.get_mut(team.raw()).expect("checked above");
            record.comm.bcast_words(&tr, 0, &mut tail_bits)?;
        }
        let tail = GlobalPtr::from_bits((tail_bits[0] as u128) | ((tail_bits[1] as u128) << 64));

        let cells = self.team_memalloc_aligned(team, 8)?;
        self.put_blocking(cells.with_unit(me), &NIL.to_le_bytes())?;
        self.barrier(team)?;
        Ok(TeamLock {
            team,
            tag: lock_tag,
            tail,
            cells,
            held: false,
            freed: false,
        })
    }

    /// Collective agreement on a lock-free verdict (internal to lock::free).
    fn lock_verdict(&mut self, team: TeamId, ok: bool) -> Result<bool> {
        let tr = self.transport();
        let record = self
            .registry
            .get_mut(team.raw())
            .ok_or(Error::NotAMember(team.raw()))?;
        let (all_ok, _) = record.comm.agree_ok(&tr, ok, 0)?;
        Ok(all_ok)
    }
}
