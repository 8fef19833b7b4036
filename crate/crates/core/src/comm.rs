//! One-sided and collective communication over global pointers.
//!
//! A one-sided call first dereferences the global pointer, then (only for
//! collective pointers) translates the absolute unit id to the team-relative
//! rank, and finally issues the transport transfer. Handles are single-use:
//! waiting or a successful test consumes them, which Rust's move semantics
//! enforce at compile time.

use crate::error::{Error, Result};
use crate::gptr::GlobalPtr;
use crate::runtime::UnitContext;
use crate::team::TeamId;
use crate::transport::RmaRequest;

/// Handle for one in-flight transfer. Gets carry the destination buffer;
/// the fetched bytes land there when the handle is waited (or successfully
/// tested).
pub struct TransferHandle<'a> {
    request: RmaRequest,
    origin_ptr: GlobalPtr,
    sink: Option<&'a mut [u8]>,
}

impl TransferHandle<'_> {
    /// The global pointer this transfer addressed; diagnostic only.
    pub fn target(&self) -> GlobalPtr {
        self.origin_ptr
    }
}

impl std::fmt::Debug for TransferHandle<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "TransferHandle({:?} -> {})",
            self.request, self.origin_ptr
        )
    }
}

impl UnitContext {
    /// Non-blocking put of `src` into the memory addressed by `dest`.
    pub fn put(&self, dest: GlobalPtr, src: &[u8]) -> Result<TransferHandle<'static>> {
        self.ensure_ready()?;
        let d = self.dereference(dest, None)?;
        if (src.len() as u64) > d.avail {
            return Err(Error::invalid_arg(format!(
                "put of {} bytes overruns the {} bytes left in the allocation",
                src.len(),
                d.avail
            )));
        }
        let request = self
            .transport()
            .put_nb(self.me, d.region, d.target_rank, d.disp, src)?;
        Ok(TransferHandle {
            request,
            origin_ptr: dest,
            sink: None,
        })
    }

    /// Non-blocking get from the memory addressed by `src` into `dest`;
    /// `dest.len()` bytes are fetched when the handle completes.
    pub fn get<'a>(&self, dest: &'a mut [u8], src: GlobalPtr) -> Result<TransferHandle<'a>> {
        self.ensure_ready()?;
        let d = self.dereference(src, None)?;
        if (dest.len() as u64) > d.avail {
            return Err(Error::invalid_arg(format!(
                "get of {} bytes overruns the {} bytes left in the allocation",
                dest.len(),
                d.avail
            )));
        }
        let request =
            self.transport()
                .get_nb(self.me, d.region, d.target_rank, d.disp, dest.len())?;
        Ok(TransferHandle {
            request,
            origin_ptr: src,
            sink: Some(dest),
        })
    }

    /// Blocks until the transfer completed at the origin and the target;
    /// afterwards the data is visible to every unit.
    pub fn wait(&self, handle: TransferHandle<'_>) -> Result<()> {
        self.ensure_ready()?;
        let TransferHandle { request, sink, .. } = handle;
        let data = self.transport().request_wait(self.me, request)?;
        if let (Some(bytes), Some(sink)) = (data, sink) {
            sink[..bytes.len()].copy_from_slice(&bytes);
        }
        Ok(())
    }

    /// Waits on every handle; order does not matter.
    pub fn waitall(&self, handles: Vec<TransferHandle<'_>>) -> Result<()> {
        for h in handles {
            self.wait(h)?;
        }
        Ok(())
    }

    /// Completion check. Returns `None` once the transfer is complete (the
    /// handle is consumed and get data delivered), or gives the handle back.
    pub fn test<'a>(&self, handle: TransferHandle<'a>) -> Result<Option<TransferHandle<'a>>> {
        self.ensure_ready()?;
        if self.transport().request_test(self.me, &handle.request)? {
            self.wait(handle)?;
            Ok(None)
        } else {
            Ok(Some(handle))
        }
    }

    /// Tests every handle, returning those still in flight.
    pub fn testall<'a>(&self, handles: Vec<TransferHandle<'a>>) -> Result<Vec<TransferHandle<'a>>> {
        let mut remaining = Vec::new();
        for h in handles {
            if let Some(h) = self.test(h)? {
                remaining.push(h);
            }
        }
        Ok(remaining)
    }

    /// Put that returns only after local and remote completion.
    pub fn put_blocking(&self, dest: GlobalPtr, src: &[u8]) -> Result<()> {
        let h = self.put(dest, src)?;
        self.wait(h)
    }

    /// Get that returns only after the bytes arrived in `dest`.
    pub fn get_blocking(&self, dest: &mut [u8], src: GlobalPtr) -> Result<()> {
        let h = self.get(dest, src)?;
        self.wait(h)
    }

    /// Collective barrier over the team.
    pub fn barrier(&mut self, team: TeamId) -> Result<()> {
        self.ensure_ready()?;
        let tr = self.transport();
        let record = self
            .registry
            .get(team.raw())
            .ok_or(Error::NotAMember(team.raw()))?;
        record.comm.barrier(&tr)
    }

    /// Collective broadcast: after the call every member's `buf` holds the
    /// bytes the member with relative id `root` passed in.
    pub fn bcast(&mut self, team: TeamId, root: u32, buf: &mut [u8]) -> Result<()> {
        self.ensure_ready()?;
        let tr = self.transport();
        let record = self
            .registry
            .get_mut(team.raw())
            .ok_or(Error::NotAMember(team.raw()))?;
        record.comm.bcast_bytes(&tr, root, buf)
    }

    /// Collective scatter in ascending member order: member `r` receives
    /// chunk `r` of the root's `send` buffer. Only the root passes `send`.
    pub fn scatter(
        &mut self,
        team: TeamId,
        root: u32,
        send: Option<&[u8]>,
        recv: &mut [u8],
    ) -> Result<()> {
        self.ensure_ready()?;
        let tr = self.transport();
        let record = self
            .registry
            .get_mut(team.raw())
            .ok_or(Error::NotAMember(team.raw()))?;
        record.comm.scatter_bytes(&tr, root, send, recv)
    }

    /// Collective gather in ascending member order: member `r`'s `send`
    /// chunk lands at chunk `r` of the root's `recv` buffer. Only the root
    /// passes `recv`.
    pub fn gather(
        &mut self,
        team: TeamId,
        root: u32,
        send: &[u8],
        recv: Option<&mut [u8]>,
    ) -> Result<()> {
        self.ensure_ready()?;
        let tr = self.transport();
        let record = self
            .registry
            .get_mut(team.raw())
            .ok_or(Error::NotAMember(team.raw()))?;
        record.comm.gather_bytes(&tr, root, send, recv)
    }
}
