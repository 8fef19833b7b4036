//! Global memory management.
//!
//! Non-collective allocation carves blocks out of the unit's partition of
//! the pre-reserved global region (first-fit free list, coalescing on free);
//! the pointer's offset is the displacement from the partition base, so
//! remote units dereference it with no translation at all.
//!
//! Collective allocation is symmetric and aligned: every member of a team
//! contributes the same number of bytes at the same pool offset, one exposed
//! region per allocation, and the (offset -> region) mapping is entered into
//! the team's translation table. The pool itself is bump-placed with stack
//! reclamation: freeing the newest segment rolls the bump pointer back
//! (absorbing adjacent tombstones), freeing older ones leaves a tombstone.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::gptr::{GlobalPtr, FLAG_COLLECTIVE, NON_COLLECTIVE_SEGMENT};
use crate::runtime::UnitContext;
use crate::team::TeamId;
use crate::transport::RegionId;

const ALIGN: u64 = 8;

fn aligned(size: u64) -> u64 {
    size.next_multiple_of(ALIGN)
}

/// First-fit free list over the unit's partition of the global region.
pub(crate) struct LocalPool {
    capacity: u64,
    /// offset -> length of free extents, disjoint and coalesced.
    free: BTreeMap<u64, u64>,
    /// offset -> aligned length of live allocations.
    allocated: BTreeMap<u64, u64>,
}

impl LocalPool {
    pub fn new(capacity: u64) -> LocalPool {
        let mut free = BTreeMap::new();
        if capacity > 0 {
            free.insert(0, capacity);
        }
        LocalPool {
            capacity,
            free,
            allocated: BTreeMap::new(),
        }
    }

    pub fn in_use(&self) -> u64 {
        self.allocated.values().sum()
    }

    pub fn alloc(&mut self, size: u64) -> Result<u64> {
        let want = aligned(size);
        let found = self
            .free
            .iter()
            .find(|(_, &len)| len >= want)
            .map(|(&off, &len)| (off, len));
        let (off, len) = found.ok_or_else(|| {
            Error::OutOfGlobalMemory(format!(
                "no free extent of {want} bytes in the local pool ({} of {} bytes in use)",
                self.in_use(),
                self.capacity
            ))
        })?;
        self.free.remove(&off);
        if len > want {
            self.free.insert(off + want, len - want);
        }
        self.allocated.insert(off, want);
        Ok(off)
    }

    pub fn free(&mut self, offset: u64) -> Result<()> {
        let len = self.allocated.remove(&offset).ok_or_else(|| {
            Error::invalid_arg(format!(
                "offset {offset} is not the start of a live local allocation"
            ))
        })?;
        let mut start = offset;
        let mut end = offset + len;
        if let Some((&poff, &plen)) = self.free.range(..offset).next_back() {
            if poff + plen == start {
                self.free.remove(&poff);
                start = poff;
            }
        }
        if let Some(&nlen) = self.free.get(&end) {
            self.free.remove(&end);
            end += nlen;
        }
        self.free.insert(start, end - start);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Segment {
    pub size: u64,
    pub region: RegionId,
}

/// Bump-placed collective pool plus the translation table mapping segment
/// offsets to their regions.
pub(crate) struct TeamPool {
    capacity: u64,
    bump: u64,
    seg_seq: u32,
    segments: BTreeMap<u64, Segment>,
    /// offset -> aligned length of freed segments not yet reclaimed.
    tombstones: BTreeMap<u64, u64>,
}

impl TeamPool {
    pub fn new(capacity: u64) -> TeamPool {
        TeamPool {
            capacity,
            bump: 0,
            seg_seq: 0,
            segments: BTreeMap::new(),
            tombstones: BTreeMap::new(),
        }
    }

    pub fn bump_offset(&self) -> u64 {
        self.bump
    }

    pub fn live_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn segment_regions_newest_first(&mut self) -> Vec<RegionId> {
        let regions: Vec<RegionId> = self.segments.values().rev().map(|s| s.region).collect();
        self.segments.clear();
        self.tombstones.clear();
        self.bump = 0;
        regions
    }

    fn place(&mut self, team: u32, size: u64) -> Result<(u64, RegionId)> {
        let want = aligned(size);
        if self.bump + want > self.capacity {
            return Err(Error::OutOfGlobalMemory(format!(
                "team pool exhausted: bump {} + {want} exceeds capacity {}",
                self.bump, self.capacity
            )));
        }
        let offset = self.bump;
        let region = RegionId::segment(team, self.seg_seq);
        self.seg_seq += 1;
        self.bump += want;
        self.segments.insert(offset, Segment { size, region });
        Ok((offset, region))
    }

    fn release(&mut self, offset: u64) -> Result<Segment> {
        let seg = self.segments.remove(&offset).ok_or_else(|| {
            Error::invalid_arg(format!(
                "offset {offset} is not the start of a live collective segment"
            ))
        })?;
        let len = aligned(seg.size);
        if offset + len == self.bump {
            self.bump = offset;
            while let Some((&toff, &tlen)) = self.tombstones.iter().next_back() {
                if toff + tlen == self.bump {
                    self.tombstones.remove(&toff);
                    self.bump = toff;
                } else {
                    break;
                }
            }
        } else {
            self.tombstones.insert(offset, len);
        }
        Ok(seg)
    }

    fn lookup(&self, offset: u64) -> Option<(u64, Segment)> {
        self.segments
            .range(..=offset)
            .next_back()
            .filter(|(&base, seg)| offset < base + seg.size)
            .map(|(&base, seg)| (base, *seg))
    }
}

/// Result of dereferencing a global pointer: where the bytes live.
#[derive(Debug, Clone, Copy)]
pub struct Dereferenced {
    /// Rank of the owning unit within the region (relative id for
    /// collective pointers, absolute id for non-collective ones).
    pub target_rank: u32,
    pub region: RegionId,
    /// Displacement inside the region.
    pub disp: u64,
    /// Bytes available from `disp` to the end of the allocation.
    pub avail: u64,
}

impl UnitContext {
    /// Non-collective allocation: local call, globally accessible result.
    /// The returned pointer addresses the caller's partition of the
    /// pre-reserved global region.
    pub fn memalloc(&mut self, size: u64) -> Result<GlobalPtr> {
        self.ensure_ready()?;
        if size == 0 {
            return Err(Error::invalid_arg("memalloc of zero bytes"));
        }
        let pool = self.local_pool.as_mut().expect("pool lives while ready");
        let offset = pool.alloc(size)?;
        GlobalPtr::encode(self.me, NON_COLLECTIVE_SEGMENT, 0, offset)
    }

    /// Returns a non-collective allocation of this unit to its free list,
    /// coalescing with free neighbours.
    pub fn memfree(&mut self, ptr: GlobalPtr) -> Result<()> {
        self.ensure_ready()?;
        if ptr.is_collective() {
            return Err(Error::invalid_arg(
                "memfree of a collective pointer; use team_memfree",
            ));
        }
        if ptr.unit() != self.me {
            return Err(Error::invalid_arg(format!(
                "memfree of unit {}'s allocation on unit {}",
                ptr.unit(),
                self.me
            )));
        }
        if ptr.segment() != NON_COLLECTIVE_SEGMENT {
            return Err(Error::invalid_arg(format!(
                "pointer segment {} is not the non-collective segment",
                ptr.segment()
            )));
        }
        let pool = self.local_pool.as_mut().expect("pool lives while ready");
        pool.free(ptr.offset())
    }

    /// Collective over `team`: symmetric, aligned allocation. Every member
    /// contributes `size` bytes at the same pool offset, so the returned
    /// pointers differ only in their unit field and any member can address
    /// any member's portion by replacing it.
    pub fn team_memalloc_aligned(&mut self, team: TeamId, size: u64) -> Result<GlobalPtr> {
        self.ensure_ready()?;
        let tr = self.transport();
        let me = self.me;
        let record = self
            .registry
            .get_mut(team.raw())
            .ok_or(Error::NotAMember(team.raw()))?;
        // Agreement first: a size mismatch (or a zero size) must surface as
        // the same error at every member.
        let agreed = record.comm.agree_words(&tr, &[size])?;
        if agreed[0] == 0 {
            return Err(Error::invalid_arg("collective allocation of zero bytes"));
        }
        let (offset, region) = record.pool.place(team.raw(), agreed[0])?;
        let members = record.group.members().to_vec();
        tr.region_create(me, region, &members, agreed[0])?;
        tr.region_epoch_open(me, region)?;
        GlobalPtr::encode(me, team.raw() as u16, FLAG_COLLECTIVE, offset)
    }

    /// Collective over `team`: removes the allocation's translation-table
    /// entry and destroys its region. Pool space is reclaimed only while the
    /// freed segment sits at the bump frontier; older frees are tombstoned
    /// until the frontier reaches them.
    pub fn team_memfree(&mut self, team: TeamId, ptr: GlobalPtr) -> Result<()> {
        self.ensure_ready()?;
        let tr = self.transport();
        let me = self.me;
        if !ptr.is_collective() {
            return Err(Error::invalid_arg(
                "team_memfree of a non-collective pointer; use memfree",
            ));
        }
        if ptr.segment() as u32 != team.raw() {
            return Err(Error::invalid_arg(format!(
                "pointer segment {} does not name team {team}",
                ptr.segment()
            )));
        }
        let record = self
            .registry
            .get_mut(team.raw())
            .ok_or(Error::NotAMember(team.raw()))?;
        record.comm.barrier(&tr)?;
        let seg = record.pool.release(ptr.offset())?;
        tr.region_destroy(me, seg.region)?;
        Ok(())
    }

    /// Resolves a pointer to (rank, region, displacement). Non-collective
    /// pointers resolve trivially: the absolute unit id is the rank and the
    /// offset is the displacement. Collective pointers find their team via
    /// the segment field, translate the absolute unit to its relative id,
    /// and look up the covering translation-table entry. A `team_hint` that
    /// contradicts the pointer's segment is rejected before any lookup.
    pub fn dereference(&self, ptr: GlobalPtr, team_hint: Option<TeamId>) -> Result<Dereferenced> {
        self.ensure_ready()?;
        if ptr.flags() & !crate::gptr::FLAG_MASK != 0 {
            return Err(Error::invalid_ptr(format!(
                "reserved flag bits set in {ptr}"
            )));
        }
        if !ptr.is_collective() {
            if ptr.segment() != NON_COLLECTIVE_SEGMENT {
                return Err(Error::invalid_ptr(format!(
                    "non-collective pointer with segment {}",
                    ptr.segment()
                )));
            }
            if ptr.unit().0 >= self.num_units() {
                return Err(Error::invalid_ptr(format!("unknown unit in {ptr}")));
            }
            let capacity = self.global.config.local_pool_bytes;
            if ptr.offset() > capacity {
                return Err(Error::invalid_ptr(format!(
                    "offset {} beyond the global segment ({capacity} bytes per unit)",
                    ptr.offset()
                )));
            }
            return Ok(Dereferenced {
                target_rank: ptr.unit().0,
                region: RegionId::GLOBAL,
                disp: ptr.offset(),
                avail: capacity - ptr.offset(),
            });
        }

        let team_id = ptr.segment() as u32;
        if let Some(hint) = team_hint {
            if hint.raw() != team_id {
                return Err(Error::invalid_ptr(format!(
                    "hint names team {hint} but {ptr} belongs to team {team_id}"
                )));
            }
        }
        let record = self.registry.get(team_id).ok_or_else(|| {
            Error::invalid_ptr(format!("no live team {team_id} for {ptr} in this registry"))
        })?;
        let rel = record.group.rank_of(ptr.unit()).ok_or_else(|| {
            Error::invalid_ptr(format!("unit {} is not in team {team_id}", ptr.unit()))
        })?;
        let (base, seg) = record.pool.lookup(ptr.offset()).ok_or_else(|| {
            Error::invalid_ptr(format!(
                "offset {} is not inside any live segment of team {team_id}",
                ptr.offset()
            ))
        })?;
        let disp = ptr.offset() - base;
        Ok(Dereferenced {
            target_rank: rel,
            region: seg.region,
            disp,
            avail: seg.size - disp,
        })
    }

    /// Bytes currently allocated from this unit's non-collective pool.
    pub fn local_pool_in_use(&self) -> Result<u64> {
        self.ensure_ready()?;
        Ok(self
            .local_pool
            .as_ref()
            .expect("pool lives while ready")
            .in_use())
    }

    /// (bump offset, live segment count) of a team's collective pool.
    pub fn team_pool_usage(&self, team: TeamId) -> Result<(u64, usize)> {
        self.ensure_ready()?;
        let record = self
            .registry
            .get(team.raw())
            .ok_or(Error::NotAMember(team.raw()))?;
        Ok((record.pool.bump_offset(), record.pool.live_segments()))
    }
}
