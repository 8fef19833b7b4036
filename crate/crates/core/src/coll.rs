//! Per-team collective machinery: a dissemination barrier over notification
//! channels, binomial-tree word and block movement, and collective parameter
//! agreement.
//!
//! Each team owns a small control region (one 8-byte slot per member; slot
//! `s` of a member's slab is written only by the member with relative rank
//! `s`) and, lazily, a scratch region for payload staging. A directed edge
//! allows one outstanding unacknowledged message: the receiver acks after
//! reading its slot, the sender waits for that ack before rewriting it.
//! Collectives on one team are required to be non-overlapping, which makes
//! the per-edge channels strictly FIFO and the slot reuse safe.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::gptr::UnitId;
use crate::transport::{RegionId, Transport};

pub(crate) const SPACE_BARRIER: u8 = 1;
pub(crate) const SPACE_CTL: u8 = 2;
pub(crate) const SPACE_CTL_ACK: u8 = 3;
pub(crate) const SPACE_BLOCK: u8 = 4;
pub(crate) const SPACE_BLOCK_ACK: u8 = 5;
pub(crate) const SPACE_LOCK: u8 = 6;

pub(crate) fn tag(team: u32, space: u8, aux: u32) -> u64 {
    debug_assert!(aux < 1 << 24);
    (team as u64) << 32 | (space as u64) << 24 | aux as u64
}

pub(crate) struct CommCtx {
    pub team: u32,
    pub members: Vec<UnitId>,
    pub my_rel: u32,
    ctl: RegionId,
    scratch: Option<(RegionId, u64)>,
    scratch_gen: u32,
    /// Relative ranks we owe an ack-read to before reusing their slot.
    ctl_out: HashSet<u32>,
    block_out: HashSet<u32>,
}

impl CommCtx {
    /// Collective over `members`: builds the team's control region.
    pub fn new(tr: &Transport, me: UnitId, team: u32, members: Vec<UnitId>) -> Result<CommCtx> {
        let my_rel = members
            .binary_search(&me)
            .map_err(|_| Error::NotAMember(team))? as u32;
        let ctl = RegionId::control(team);
        tr.region_create(me, ctl, &members, members.len() as u64 * 8)?;
        tr.region_epoch_open(me, ctl)?;
        Ok(CommCtx {
            team,
            members,
            my_rel,
            ctl,
            scratch: None,
            scratch_gen: 0,
            ctl_out: HashSet::new(),
            block_out: HashSet::new(),
        })
    }

    fn me(&self) -> UnitId {
        self.members[self.my_rel as usize]
    }

    fn abs(&self, rel: u32) -> UnitId {
        self.members[rel as usize]
    }

    // ------------------------------------------------------------------
    // Barrier
    // ------------------------------------------------------------------

    /// Dissemination barrier: ceil(log2 n) rounds of tagged notifications.
    pub fn barrier(&self, tr: &Transport) -> Result<()> {
        let n = self.members.len() as u32;
        if n == 1 {
            return Ok(());
        }
        let me = self.me();
        let mut dist = 1u32;
        let mut round = 0u32;
        while dist < n {
            let to = self.abs((self.my_rel + dist) % n);
            let from = self.abs((self.my_rel + n - dist) % n);
            tr.notify_send(me, to, tag(self.team, SPACE_BARRIER, round))?;
            tr.notify_recv(me, from, tag(self.team, SPACE_BARRIER, round))?;
            dist *= 2;
            round += 1;
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Word channel over the control region
    // ------------------------------------------------------------------

    fn send_ctl(&mut self, tr: &Transport, peer_rel: u32, value: u64) -> Result<()> {
        let me = self.me();
        let peer = self.abs(peer_rel);
        if self.ctl_out.remove(&peer_rel) {
            tr.notify_recv(me, peer, tag(self.team, SPACE_CTL_ACK, 0))?;
        }
        let req = tr.put_nb(
            me,
            self.ctl,
            peer_rel,
            self.my_rel as u64 * 8,
            &value.to_le_bytes(),
        )?;
        tr.request_wait(me, req)?;
        tr.notify_send(me, peer, tag(self.team, SPACE_CTL, 0))?;
        self.ctl_out.insert(peer_rel);
        Ok(())
    }

    fn recv_ctl(&mut self, tr: &Transport, peer_rel: u32) -> Result<u64> {
        let me = self.me();
        let peer = self.abs(peer_rel);
        tr.notify_recv(me, peer, tag(self.team, SPACE_CTL, 0))?;
        let req = tr.get_nb(me, self.ctl, self.my_rel, peer_rel as u64 * 8, 8)?;
        let data = tr.request_wait(me, req)?.expect("get yields data");
        tr.notify_send(me, peer, tag(self.team, SPACE_CTL_ACK, 0))?;
        Ok(u64::from_le_bytes(data.try_into().unwrap()))
    }

    // ------------------------------------------------------------------
    // Word-sized reductions and broadcasts
    // ------------------------------------------------------------------

    /// Binomial reduce of (min, max) of `value` to relative rank 0.
    /// Non-zero ranks return None.
    fn reduce_minmax(&mut self, tr: &Transport, value: u64) -> Result<Option<(u64, u64)>> {
        let n = self.members.len() as u32;
        let (mut lo, mut hi) = (value, value);
        let mut mask = 1u32;
        while mask < n {
            if self.my_rel & mask != 0 {
                let parent = self.my_rel - mask;
                self.send_ctl(tr, parent, lo)?;
                self.send_ctl(tr, parent, hi)?;
                return Ok(None);
            }
            let child = self.my_rel + mask;
            if child < n {
                let clo = self.recv_ctl(tr, child)?;
                let chi = self.recv_ctl(tr, child)?;
                lo = lo.min(clo);
                hi = hi.max(chi);
            }
            mask <<= 1;
        }
        Ok(Some((lo, hi)))
    }

    /// Binomial broadcast of `words` from `root_rel`; on return every member
    /// holds the root's values.
    pub fn bcast_words(&mut self, tr: &Transport, root_rel: u32, words: &mut [u64]) -> Result<()> {
        let n = self.members.len() as u32;
        if root_rel >= n {
            return Err(Error::invalid_arg(format!(
                "root {root_rel} outside team of {n}"
            )));
        }
        if n == 1 || words.is_empty() {
            return Ok(());
        }
        let v = (self.my_rel + n - root_rel) % n;
        let actual = |virt: u32| (virt + root_rel) % n;
        let mut mask = 1u32;
        while mask < n {
            if v & mask != 0 {
                let src = actual(v - mask);
                for w in words.iter_mut() {
                    *w = self.recv_ctl(tr, src)?;
                }
                break;
            }
            mask <<= 1;
        }
        mask >>= 1;
        while mask > 0 {
            if v + mask < n {
                let dst = actual(v + mask);
                for w in words.iter() {
                    self.send_ctl(tr, dst, *w)?;
                }
            }
            mask >>= 1;
        }
        Ok(())
    }

    /// Collective agreement: fails at every member unless all members passed
    /// the same words. Returns the agreed words.
    pub fn agree_words(&mut self, tr: &Transport, words: &[u64]) -> Result<Vec<u64>> {
        let mut all_equal = true;
        let mut agreed = words.to_vec();
        for w in agreed.iter_mut() {
            let root_view = self.reduce_minmax(tr, *w)?;
            let mut verdict = match root_view {
                Some((lo, hi)) => [(lo == hi) as u64, lo],
                None => [0, 0],
            };
            self.bcast_words(tr, 0, &mut verdict)?;
            if verdict[0] == 0 {
                all_equal = false;
            }
            *w = verdict[1];
        }
        if all_equal {
            Ok(agreed)
        } else {
            Err(Error::invalid_arg(format!(
                "collective parameter mismatch across members of team {}",
                self.team
            )))
        }
    }

    /// Collective all-agree on a flag plus a payload word, used for
    /// symmetric error verdicts. Returns (every member passed ok=true,
    /// minimum of the values).
    pub fn agree_ok(&mut self, tr: &Transport, ok: bool, value: u64) -> Result<(bool, u64)> {
        let root_view = self.reduce_minmax(tr, ok as u64)?;
        let value_view = self.reduce_minmax(tr, value)?;
        let mut verdict = match (root_view, value_view) {
            (Some((lo, _)), Some((vlo, _))) => [lo, vlo],
            _ => [0, 0],
        };
        self.bcast_words(tr, 0, &mut verdict)?;
        Ok((verdict[0] == 1, verdict[1]))
    }

    // ------------------------------------------------------------------
    // Block movement over the scratch region
    // ------------------------------------------------------------------

    /// Collective: makes the scratch region at least `needed` bytes per
    /// member. Every member must call with the same `needed`.
    fn ensure_scratch(&mut self, tr: &Transport, needed: u64) -> Result<()> {
        if let Some((_, have)) = self.scratch {
            if have >= needed {
                return Ok(());
            }
        }
        let me = self.me();
        if let Some((old, _)) = self.scratch.take() {
            self.drain_block_acks(tr)?;
            tr.region_destroy(me, old)?;
        }
        let size = needed.next_power_of_two().max(4096);
        self.scratch_gen += 1;
        let id = RegionId::scratch(self.team, self.scratch_gen);
        tr.region_create(me, id, &self.members, size)?;
        tr.region_epoch_open(me, id)?;
        self.scratch = Some((id, size));
        Ok(())
    }

    fn send_block(&mut self, tr: &Transport, peer_rel: u32, disp: u64, bytes: &[u8]) -> Result<()> {
        let me = self.me();
        let peer = self.abs(peer_rel);
        if self.block_out.remove(&peer_rel) {
            tr.notify_recv(me, peer, tag(self.team, SPACE_BLOCK_ACK, 0))?;
        }
        let (region, _) = self.scratch.expect("scratch exists before block send");
        let req = tr.put_nb(me, region, peer_rel, disp, bytes)?;
        tr.request_wait(me, req)?;
        tr.notify_send(me, peer, tag(self.team, SPACE_BLOCK, 0))?;
        self.block_out.insert(peer_rel);
        Ok(())
    }

    fn recv_block(
        &mut self,
        tr: &Transport,
        peer_rel: u32,
        disp: u64,
        len: usize,
    ) -> Result<Vec<u8>> {
        let me = self.me();
        let peer = self.abs(peer_rel);
        tr.notify_recv(me, peer, tag(self.team, SPACE_BLOCK, 0))?;
        let (region, _) = self.scratch.expect("scratch exists before block recv");
        let req = tr.get_nb(me, region, self.my_rel, disp, len)?;
        let data = tr.request_wait(me, req)?.expect("get yields data");
        tr.notify_send(me, peer, tag(self.team, SPACE_BLOCK_ACK, 0))?;
        Ok(data)
    }

    // ------------------------------------------------------------------
    // Data collectives
    // ------------------------------------------------------------------

    /// Broadcast: after the call every member's `buf` equals the root's.
    pub fn bcast_bytes(&mut self, tr: &Transport, root_rel: u32, buf: &mut [u8]) -> Result<()> {
        let n = self.members.len() as u32;
        let agreed = self.agree_words(tr, &[root_rel as u64, buf.len() as u64])?;
        let root_rel = agreed[0] as u32;
        if root_rel >= n {
            return Err(Error::invalid_arg(format!(
                "root {root_rel} outside team of {n}"
            )));
        }
        if n == 1 || buf.is_empty() {
            return Ok(());
        }
        self.ensure_scratch(tr, buf.len() as u64)?;
        let v = (self.my_rel + n - root_rel) % n;
        let actual = |virt: u32| (virt + root_rel) % n;
        let mut mask = 1u32;
        while mask < n {
            if v & mask != 0 {
                let src = actual(v - mask);
                let data = self.recv_block(tr, src, 0, buf.len())?;
                buf.copy_from_slice(&data);
                break;
            }
            mask <<= 1;
        }
        mask >>= 1;
        while mask > 0 {
            if v + mask < n {
                let dst = actual(v + mask);
                self.send_block(tr, dst, 0, buf)?;
            }
            mask >>= 1;
        }
        Ok(())
    }

    /// Scatter: the root's `send` (one `recv.len()` chunk per member, in
    /// relative rank order) is split so member `r` receives chunk `r`.
    pub fn scatter_bytes(
        &mut self,
        tr: &Transport,
        root_rel: u32,
        send: Option<&[u8]>,
        recv: &mut [u8],
    ) -> Result<()> {
        let n = self.members.len() as u32;
        let chunk = recv.len();
        let agreed = self.agree_words(tr, &[root_rel as u64, chunk as u64])?;
        let root_rel = agreed[0] as u32;
        if root_rel >= n {
            return Err(Error::invalid_arg(format!(
                "root {root_rel} outside team of {n}"
            )));
        }
        let is_root = self.my_rel == root_rel;
        // The root's buffer problem must fail everyone, or the tree
        // desynchronizes; fold it into a collective verdict.
        let root_ok = !is_root || send.is_some_and(|s| s.len() == chunk * n as usize);
        if !self.agree_ok(tr, root_ok, 0)?.0 {
            return Err(Error::invalid_arg(
                "scatter root passed no send buffer or one not of members x chunk bytes",
            ));
        }
        if chunk == 0 {
            return Ok(());
        }
        if n == 1 {
            recv.copy_from_slice(&send.unwrap()[..chunk]);
            return Ok(());
        }

        let v = (self.my_rel + n - root_rel) % n;
        let actual = |virt: u32| (virt + root_rel) % n;
        let span = (n as u64).next_power_of_two();
        self.ensure_scratch(tr, span * chunk as u64)?;

        // The working block covers virtual ranks [v, v + my_span), laid out
        // in virtual order.
        let mut block: Vec<u8>;
        let mut mask = 1u32;
        if v == 0 {
            block = vec![0u8; n as usize * chunk];
            for virt in 0..n {
                let a = actual(virt) as usize;
                block[virt as usize * chunk..(virt as usize + 1) * chunk]
                    .copy_from_slice(&send.unwrap()[a * chunk..(a + 1) * chunk]);
            }
            while mask < n {
                mask <<= 1;
            }
        } else {
            loop {
                if v & mask != 0 {
                    let src = actual(v - mask);
                    let cnt = mask.min(n - v) as usize;
                    block = self.recv_block(tr, src, 0, cnt * chunk)?;
                    break;
                }
                mask <<= 1;
            }
        }
        mask >>= 1;
        while mask > 0 {
            if v + mask < n {
                let dst = actual(v + mask);
                let cnt = mask.min(n - (v + mask)) as usize;
                let from = mask as usize * chunk;
                self.send_block(tr, dst, 0, &block[from..from + cnt * chunk])?;
            }
            mask >>= 1;
        }
        recv.copy_from_slice(&block[..chunk]);
        Ok(())
    }

    /// Gather: member `r`'s `send` chunk lands at chunk `r` of the root's
    /// `recv` buffer.
    pub fn gather_bytes(
        &mut self,
        tr: &Transport,
        root_rel: u32,
        send: &[u8],
        recv: Option<&mut [u8]>,
    ) -> Result<()> {
        let n = self.members.len() as u32;
        let chunk = send.len();
        let agreed = self.agree_words(tr, &[root_rel as u64, chunk as u64])?;
        let root_rel = agreed[0] as u32;
        if root_rel >= n {
            return Err(Error::invalid_arg(format!(
                "root {root_rel} outside team of {n}"
            )));
        }
        let is_root = self.my_rel == root_rel;
        let root_ok = !is_root || recv.as_ref().is_some_and(|r| r.len() == chunk * n as usize);
        if !self.agree_ok(tr, root_ok, 0)?.0 {
            return Err(Error::invalid_arg(
                "gather root passed no recv buffer or one not of members x chunk bytes",
            ));
        }
        let recv = if is_root { recv } else { None };
        if chunk == 0 {
            return Ok(());
        }
        if n == 1 {
            recv.unwrap().copy_from_slice(send);
            return Ok(());
        }

        let v = (self.my_rel + n - root_rel) % n;
        let actual = |virt: u32| (virt + root_rel) % n;
        let span = (n as u64).next_power_of_two();
        self.ensure_scratch(tr, span * chunk as u64)?;

        let my_span = {
            // Largest power of two not conflicting with v's low bits, capped
            // by the member count: the subtree rooted at v.
            let mut s = 1u32;
            while v & s == 0 && v + s < n && s < n {
                s <<= 1;
            }
            s.min(n - v)
        };
        let mut block = vec![0u8; my_span as usize * chunk];
        block[..chunk].copy_from_slice(send);

        let mut mask = 1u32;
        while mask < n {
            if v & mask != 0 {
                // Our block lands `mask` chunks into the parent's block.
                let dst = actual(v - mask);
                self.send_block(tr, dst, mask as u64 * chunk as u64, &block)?;
                return Ok(());
            }
            let child = v + mask;
            if child < n {
                let cnt = mask.min(n - child) as usize;
                let disp = (child - v) as u64 * chunk as u64;
                let data = self.recv_block(tr, actual(child), disp, cnt * chunk)?;
                block[(child - v) as usize * chunk..][..cnt * chunk].copy_from_slice(&data);
            }
            mask <<= 1;
        }
        // Only the root reaches here; rotate virtual order back to relative.
        let recv = recv.expect("non-root returned in the send branch");
        for rel in 0..n {
            let virt = (rel + n - root_rel) % n;
            recv[rel as usize * chunk..(rel as usize + 1) * chunk]
                .copy_from_slice(&block[virt as usize * chunk..(virt as usize + 1) * chunk]);
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Teardown
    // ------------------------------------------------------------------

    fn drain_ctl_acks(&mut self, tr: &Transport) -> Result<()> {
        let me = self.me();
        let peers: Vec<u32> = self.ctl_out.drain().collect();
        for peer_rel in peers {
            tr.notify_recv(me, self.abs(peer_rel), tag(self.team, SPACE_CTL_ACK, 0))?;
        }
        Ok(())
    }

    fn drain_block_acks(&mut self, tr: &Transport) -> Result<()> {
        let me = self.me();
        let peers: Vec<u32> = self.block_out.drain().collect();
        for peer_rel in peers {
            tr.notify_recv(me, self.abs(peer_rel), tag(self.team, SPACE_BLOCK_ACK, 0))?;
        }
        Ok(())
    }

    /// Collective: consumes outstanding acks and releases the team's regions.
    pub fn destroy(&mut self, tr: &Transport) -> Result<()> {
        let me = self.me();
        self.drain_ctl_acks(tr)?;
        self.drain_block_acks(tr)?;
        if let Some((scratch, _)) = self.scratch.take() {
            tr.region_destroy(me, scratch)?;
        }
        tr.region_destroy(me, self.ctl)
    }
}
