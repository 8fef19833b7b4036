//! Ordered groups: locally manipulable sets of units out of which teams are
//! formed. A group's members are always strictly ascending by absolute unit
//! id with no duplicates; every operation preserves that invariant.

use crate::error::{Error, Result};
use crate::gptr::UnitId;

/// An ordered set of absolute unit ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Group {
    members: Vec<UnitId>,
}

impl Group {
    /// The empty group.
    pub fn new() -> Group {
        Group::default()
    }

    pub fn from_members(mut members: Vec<UnitId>) -> Group {
        members.sort_unstable();
        members.dedup();
        Group { members }
    }

    /// Members of `0..n`, ascending.
    pub fn all(n: u32) -> Group {
        Group {
            members: (0..n).map(UnitId).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, unit: UnitId) -> bool {
        self.members.binary_search(&unit).is_ok()
    }

    pub fn members(&self) -> &[UnitId] {
        &self.members
    }

    /// Position of `unit` in the ascending member list: its relative id.
    pub fn rank_of(&self, unit: UnitId) -> Option<u32> {
        self.members.binary_search(&unit).ok().map(|i| i as u32)
    }

    /// Absolute id at relative position `rank`.
    pub fn at_rank(&self, rank: u32) -> Option<UnitId> {
        self.members.get(rank as usize).copied()
    }

    /// Group with `unit` added. Idempotent: adding an existing member
    /// returns an equal group.
    pub fn with_member(&self, unit: UnitId) -> Group {
        match self.members.binary_search(&unit) {
            Ok(_) => self.clone(),
            Err(pos) => {
                let mut members = self.members.clone();
                members.insert(pos, unit);
                Group { members }
            }
        }
    }

    /// Sorted set union, merging the two ascending member lists.
    pub fn union(&self, other: &Group) -> Group {
        let (a, b) = (&self.members, &other.members);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Group { members: out }
    }

    /// True iff every member of `self` is a member of `other`.
    pub fn is_subset_of(&self, other: &Group) -> bool {
        self.members.iter().all(|u| other.contains(*u))
    }

    pub(crate) fn assert_ordered(&self) {
        debug_assert!(self.members.windows(2).all(|w| w[0] < w[1]));
    }
}

/// Splitting groups is not part of this runtime.
pub fn group_split(_g: &Group, _n: usize) -> Result<Vec<Group>> {
    Err(Error::Unsupported("group_split"))
}

/// Removing members is not part of this runtime; rebuild the group instead.
pub fn group_delmember(_g: &Group, _unit: UnitId) -> Result<Group> {
    Err(Error::Unsupported("group_delmember"))
}
