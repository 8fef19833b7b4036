//! Teams and the per-unit team registry.
//!
//! A team id, once assigned, is never reused for the life of the run, so the
//! registry does not index by id. Instead a fixed-capacity `teamlist` array
//! holds the ids of live teams (-1 marks an empty slot); the first empty
//! slot, found by linear scan, is assigned at creation and reset at
//! destruction. The slot index keys the per-team state (communication
//! context, memory pool, translation table) held in the parallel `teams`
//! array.

use std::fmt;
use std::sync::atomic::Ordering;

use crate::coll::CommCtx;
use crate::error::{Error, Result};
use crate::gptr::{UnitId, NON_COLLECTIVE_SEGMENT};
use crate::group::Group;
use crate::memory::TeamPool;
use crate::runtime::UnitContext;

/// Identifier of a team. The default team spanning all units has id 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TeamId(u32);

impl TeamId {
    /// The default team containing every unit of the run.
    pub const ALL: TeamId = TeamId(0);

    pub fn raw(self) -> u32 {
        self.0
    }

    pub fn from_raw(id: u32) -> TeamId {
        TeamId(id)
    }
}

impl fmt::Display for TeamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub(crate) struct TeamRecord {
    pub id: u32,
    pub parent: u32,
    pub group: Group,
    pub comm: CommCtx,
    pub pool: TeamPool,
    pub lock_seq: u32,
}

const EMPTY_SLOT: i64 = -1;

pub(crate) struct TeamRegistry {
    teamlist: Vec<i64>,
    teams: Vec<Option<TeamRecord>>,
    creation_log: Vec<u32>,
}

impl TeamRegistry {
    pub fn new(capacity: usize) -> TeamRegistry {
        TeamRegistry {
            teamlist: vec![EMPTY_SLOT; capacity],
            teams: (0..capacity).map(|_| None).collect(),
            creation_log: Vec::new(),
        }
    }

    pub fn slot_of(&self, id: u32) -> Option<usize> {
        self.teamlist.iter().position(|&s| s == id as i64)
    }

    pub fn first_free_slot(&self) -> Option<usize> {
        self.teamlist.iter().position(|&s| s == EMPTY_SLOT)
    }

    pub fn get(&self, id: u32) -> Option<&TeamRecord> {
        self.slot_of(id).and_then(|s| self.teams[s].as_ref())
    }

    pub fn get_mut(&mut self, id: u32) -> Option<&mut TeamRecord> {
        let slot = self.slot_of(id)?;
        self.teams[slot].as_mut()
    }

    pub fn insert(&mut self, record: TeamRecord) -> Result<usize> {
        let slot = self
            .first_free_slot()
            .ok_or_else(|| Error::ResourceExhausted("teamlist is full".into()))?;
        self.teamlist[slot] = record.id as i64;
        if record.id != TeamId::ALL.raw() {
            self.creation_log.push(record.id);
        }
        self.teams[slot] = Some(record);
        Ok(slot)
    }

    pub fn remove(&mut self, id: u32) -> Option<TeamRecord> {
        let slot = self.slot_of(id)?;
        self.teamlist[slot] = EMPTY_SLOT;
        self.creation_log.retain(|&t| t != id);
        self.teams[slot].take()
    }

    /// User-created teams still live, newest first; the order every unit
    /// tears them down in at finalize.
    pub fn creation_order_newest_first(&self) -> Vec<u32> {
        let mut v = self.creation_log.clone();
        v.reverse();
        v
    }

    pub fn snapshot(&self) -> Vec<i64> {
        self.teamlist.clone()
    }

    pub fn dump(&self) -> String {
        let mut out = String::from("slot teamid parent members\n");
        for (i, &s) in self.teamlist.iter().enumerate() {
            match self.teams[i].as_ref() {
                Some(t) => {
                    let members: Vec<String> =
                        t.group.members().iter().map(|u| u.0.to_string()).collect();
                    out.push_str(&format!(
                        "{i:4} {s:6} {:6} [{}]\n",
                        t.parent,
                        members.join(",")
                    ));
                }
                None => out.push_str(&format!("{i:4} {s:6}      - -\n")),
            }
        }
        out
    }
}

impl UnitContext {
    /// Adds `unit` to the group with range validation against the run's
    /// unit count: a singleton group is formed and merged in, so the result
    /// stays strictly ascending and the call is idempotent on existing
    /// members.
    pub fn group_addmember(&self, g: &Group, unit: UnitId) -> Result<Group> {
        self.ensure_ready()?;
        if unit.0 >= self.num_units() {
            return Err(Error::invalid_arg(format!(
                "unit {unit} outside the global unit count {}",
                self.num_units()
            )));
        }
        Ok(g.union(&Group::from_members(vec![unit])))
    }

    /// Collective over `parent`'s members: forms a team over `group`,
    /// assigning the first free teamlist slot and a fresh, never-reused id.
    /// Members of `group` receive `Some(id)`, other parent members `None`.
    pub fn team_create(&mut self, parent: TeamId, group: &Group) -> Result<Option<TeamId>> {
        self.ensure_ready()?;
        let tr = self.transport();
        let me = self.me;
        {
            let parent_rec = self
                .registry
                .get(parent.raw())
                .ok_or_else(|| Error::invalid_arg(format!("unknown parent team {parent}")))?;
            if !parent_rec.group.contains(me) {
                return Err(Error::NotAMember(parent.raw()));
            }
            if group.is_empty() {
                return Err(Error::invalid_arg("team group must be non-empty"));
            }
            if !group.is_subset_of(&parent_rec.group) {
                return Err(Error::invalid_arg(
                    "team group is not a subset of the parent team",
                ));
            }
        }
        group.assert_ordered();
        let in_new_team = group.contains(me);

        // Parent-wide agreement first: every prospective member must have a
        // free slot, so capacity exhaustion errors at every caller alike and
        // burns no id. Only then does relative 0 draw the fresh id.
        let parent_rel0;
        {
            let parent_rec = self.registry.get(parent.raw()).unwrap();
            parent_rel0 = parent_rec.group.rank_of(me) == Some(0);
        }
        let have_slot = !in_new_team || self.registry.first_free_slot().is_some();
        let all_ok = {
            let parent_rec = self.registry.get_mut(parent.raw()).unwrap();
            parent_rec.comm.agree_ok(&tr, have_slot, 0)?.0
        };
        if !all_ok {
            return Err(Error::ResourceExhausted("teamlist is full".into()));
        }
        let mut id_word = [if parent_rel0 {
            self.global.next_team_id.fetch_add(1, Ordering::SeqCst) as u64
        } else {
            0
        }];
        {
            let parent_rec = self.registry.get_mut(parent.raw()).unwrap();
            parent_rec.comm.bcast_words(&tr, 0, &mut id_word)?;
        }
        let new_id = id_word[0] as u32;
        if new_id as u64 >= NON_COLLECTIVE_SEGMENT as u64 {
            return Err(Error::ResourceExhausted(
                "team id space exhausted (segment field holds 16 bits)".into(),
            ));
        }

        if in_new_team {
            let comm = CommCtx::new(&tr, me, new_id, group.members().to_vec())?;
            let record = TeamRecord {
                id: new_id,
                parent: parent.raw(),
                group: group.clone(),
                comm,
                pool: TeamPool::new(self.global.config.team_pool_bytes),
                lock_seq: 0,
            };
            self.registry.insert(record)?;
        }

        // team_create synchronizes over the parent so every member observes
        // the slot assignment before anyone proceeds.
        self.registry.get(parent.raw()).unwrap().comm.barrier(&tr)?;
        Ok(in_new_team.then_some(TeamId::from_raw(new_id)))
    }

    /// Collective over `team`'s members: releases the team's regions and
    /// translation table, resets its teamlist slot to -1, and retires the
    /// id forever.
    pub fn team_destroy(&mut self, team: TeamId) -> Result<()> {
        self.ensure_ready()?;
        if team == TeamId::ALL {
            return Err(Error::invalid_arg("the default team cannot be destroyed"));
        }
        if self.registry.get(team.raw()).is_none() {
            return Err(Error::invalid_arg(format!(
                "unknown or destroyed team {team}"
            )));
        }
        self.destroy_team_resources(team.raw())
    }

    pub(crate) fn destroy_team_resources(&mut self, id: u32) -> Result<()> {
        let tr = self.transport();
        let me = self.me;
        {
            let record = self.registry.get(id).expect("caller checked liveness");
            record.comm.barrier(&tr)?;
        }
        let mut record = self.registry.remove(id).expect("present under same borrow");
        for region in record.pool.segment_regions_newest_first() {
            tr.region_destroy(me, region)?;
        }
        record.comm.destroy(&tr)?;
        Ok(())
    }

    /// The caller's relative id within the team.
    pub fn team_my_id(&self, team: TeamId) -> Result<u32> {
        self.ensure_ready()?;
        let record = self
            .registry
            .get(team.raw())
            .ok_or(Error::NotAMember(team.raw()))?;
        record
            .group
            .rank_of(self.me)
            .ok_or(Error::NotAMember(team.raw()))
    }

    pub fn team_size(&self, team: TeamId) -> Result<u32> {
        self.ensure_ready()?;
        let record = self
            .registry
            .get(team.raw())
            .ok_or(Error::NotAMember(team.raw()))?;
        Ok(record.group.len() as u32)
    }

    /// A copy of the team's member set.
    pub fn team_group(&self, team: TeamId) -> Result<Group> {
        self.ensure_ready()?;
        let record = self
            .registry
            .get(team.raw())
            .ok_or(Error::NotAMember(team.raw()))?;
        Ok(record.group.clone())
    }

    /// Absolute unit id -> relative id within `team`.
    pub fn global_to_local(&self, team: TeamId, unit: UnitId) -> Result<u32> {
        self.ensure_ready()?;
        let record = self
            .registry
            .get(team.raw())
            .ok_or(Error::NotAMember(team.raw()))?;
        record.group.rank_of(unit).ok_or_else(|| {
            Error::invalid_arg(format!("unit {unit} is not a member of team {team}"))
        })
    }

    /// Relative id within `team` -> absolute unit id.
    pub fn local_to_global(&self, team: TeamId, rel: u32) -> Result<UnitId> {
        self.ensure_ready()?;
        let record = self
            .registry
            .get(team.raw())
            .ok_or(Error::NotAMember(team.raw()))?;
        record
            .group
            .at_rank(rel)
            .ok_or_else(|| Error::invalid_arg(format!("relative id {rel} outside team {team}")))
    }

    /// Teamlist snapshot: -1 for empty slots, otherwise the live team id.
    pub fn teamlist_snapshot(&self) -> Vec<i64> {
        self.registry.snapshot()
    }

    /// Human-readable registry state.
    pub fn dump_registry(&self) -> String {
        self.registry.dump()
    }
}
