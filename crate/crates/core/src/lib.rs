//! A partitioned global address space runtime: SPMD units, ordered groups
//! and teams, 128-bit global pointers, collective and non-collective global
//! memory, one-sided blocking/non-blocking communication, collectives, and
//! a distributed queuing lock, all over a pluggable one-sided transport.
//!
//! Programs run SPMD-style under [`launch`]: every unit executes the same
//! entry procedure against its own [`UnitContext`]. Memory allocated into
//! the global space is addressed by [`GlobalPtr`] values that any unit can
//! dereference, and moved with one-sided put/get that the target never has
//! to participate in.
//!
//! ```
//! use pgas_core::{launch, RuntimeConfig};
//!
//! let statuses = launch(RuntimeConfig::new(4), |ctx| {
//!     ctx.init()?;
//!     let me = ctx.my_id();
//!     ctx.barrier(pgas_core::TeamId::ALL)?;
//!     ctx.finalize()?;
//!     Ok(me.0 as i32)
//! })
//! .unwrap();
//! assert_eq!(statuses, vec![0, 1, 2, 3]);
//! ```

pub mod bench;
mod coll;
mod comm;
mod error;
mod gptr;
mod group;
mod lock;
mod memory;
mod runtime;
mod team;
pub mod transport;

pub use comm::TransferHandle;
pub use error::{Error, Result};
pub use gptr::{GlobalPtr, UnitId, FLAG_COLLECTIVE, FLAG_MASK, NON_COLLECTIVE_SEGMENT};
pub use group::{group_delmember, group_split, Group};
pub use lock::TeamLock;
pub use memory::Dereferenced;
pub use runtime::{launch, launch_traced, RuntimeConfig, UnitContext};
pub use team::TeamId;
