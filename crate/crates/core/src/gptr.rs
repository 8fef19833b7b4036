//! The 128-bit global pointer: a handle addressing any byte of the global
//! address space as (unit, segment, flags, offset).
//!
//! Canonical packing, low bits first:
//!
//! ```text
//! bits [  0, 32)  unit id      (absolute)
//! bits [ 32, 48)  segment id   (owning team id, or 0xFFFF for non-collective)
//! bits [ 48, 64)  flags        (bit 0: collective allocation; rest reserved zero)
//! bits [ 64,128)  byte offset
//! ```
//!
//! The packed `u128` is the wire and storage format; it is stable across
//! runs and platforms. `Display` renders the `u:<unit>/s:<segment>/f:<flags>/o:<offset>`
//! form used in logs.

use std::fmt;

use crate::error::{Error, Result};

/// Absolute id of a unit (its rank in the global unit set). Relative ids
/// (ranks within a team) are plain `u32` values in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UnitId(pub u32);

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Flag bit marking a pointer into a collective (team) allocation.
pub const FLAG_COLLECTIVE: u16 = 0x0001;

/// All flag bits with defined meaning; the rest are reserved and must be zero.
pub const FLAG_MASK: u16 = FLAG_COLLECTIVE;

/// Segment id carried by non-collective pointers. Collective pointers carry
/// the owning team's id, so team ids must stay below this sentinel.
pub const NON_COLLECTIVE_SEGMENT: u16 = 0xFFFF;

const UNIT_SHIFT: u32 = 0;
const SEGMENT_SHIFT: u32 = 32;
const FLAGS_SHIFT: u32 = 48;
const OFFSET_SHIFT: u32 = 64;

/// A 128-bit global pointer.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct GlobalPtr(u128);

impl GlobalPtr {
    /// Packs the four fields into the canonical 128-bit value.
    ///
    /// Fails if `flags` uses any reserved bit.
    pub fn encode(unit: UnitId, segment: u16, flags: u16, offset: u64) -> Result<GlobalPtr> {
        if flags & !FLAG_MASK != 0 {
            return Err(Error::invalid_arg(format!(
                "reserved flag bits set: {flags:#06x}"
            )));
        }
        Ok(GlobalPtr(
            ((unit.0 as u128) << UNIT_SHIFT)
                | ((segment as u128) << SEGMENT_SHIFT)
                | ((flags as u128) << FLAGS_SHIFT)
                | ((offset as u128) << OFFSET_SHIFT),
        ))
    }

    /// Unpacks into (unit, segment, flags, offset). Exact inverse of [`encode`].
    ///
    /// [`encode`]: GlobalPtr::encode
    pub fn decode(self) -> (UnitId, u16, u16, u64) {
        (self.unit(), self.segment(), self.flags(), self.offset())
    }

    pub fn unit(self) -> UnitId {
        UnitId((self.0 >> UNIT_SHIFT) as u32)
    }

    pub fn segment(self) -> u16 {
        (self.0 >> SEGMENT_SHIFT) as u16
    }

    pub fn flags(self) -> u16 {
        (self.0 >> FLAGS_SHIFT) as u16
    }

    pub fn offset(self) -> u64 {
        (self.0 >> OFFSET_SHIFT) as u64
    }

    /// True for pointers produced by collective (team) allocation.
    pub fn is_collective(self) -> bool {
        self.flags() & FLAG_COLLECTIVE != 0
    }

    /// Same pointer with the unit field replaced. For aligned collective
    /// allocations this is how a member addresses any other member's portion.
    pub fn with_unit(self, unit: UnitId) -> GlobalPtr {
        GlobalPtr((self.0 & !0xFFFF_FFFFu128) | unit.0 as u128)
    }

    /// Pointer displaced by `delta` bytes; all other fields unchanged.
    ///
    /// Fails when the resulting offset would leave `[0, 2^64)`.
    pub fn advance(self, delta: i64) -> Result<GlobalPtr> {
        let offset = self.offset().checked_add_signed(delta).ok_or_else(|| {
            Error::invalid_arg(format!(
                "offset {} + delta {} leaves the 64-bit range",
                self.offset(),
                delta
            ))
        })?;
        GlobalPtr::encode(self.unit(), self.segment(), self.flags(), offset)
    }

    /// The canonical 128-bit packing.
    pub fn to_bits(self) -> u128 {
        self.0
    }

    /// Reinterprets a packed value. No validation: reserved flag bits are
    /// preserved as-is so foreign values can be inspected.
    pub fn from_bits(bits: u128) -> GlobalPtr {
        GlobalPtr(bits)
    }

    /// Little-endian byte serialization of the packing.
    pub fn to_le_bytes(self) -> [u8; 16] {
        self.0.to_le_bytes()
    }

    pub fn from_le_bytes(bytes: [u8; 16]) -> GlobalPtr {
        GlobalPtr(u128::from_le_bytes(bytes))
    }
}

impl fmt::Display for GlobalPtr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "u:{}/s:{}/f:{}/o:{}",
            self.unit().0,
            self.segment(),
            self.flags(),
            self.offset()
        )
    }
}

impl fmt::Debug for GlobalPtr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GlobalPtr({self})")
    }
}
