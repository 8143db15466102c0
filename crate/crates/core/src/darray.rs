//! Distributed arrays. Each pid materializes only its own piece of the
//! global array; all access goes through the local buffer.
//!
//! The buffer is one 64-byte aligned slab laid out owned-first (see
//! [`LocalExtent`]), so [`DArray::local_view`] is always a dense slice. The
//! only operation that talks to other processes is [`DArray::sync_overlap`].

use std::alloc::{self, Layout};
use std::collections::BTreeSet;
use std::fmt;
use std::ops::{Deref, DerefMut};
use std::ptr::NonNull;
use std::thread;

use thiserror::Error;

use crate::dmap::{Index, LocalExtent, Map, MapError};
use crate::fsum::ExactSum;
use crate::runtime::{Comm, RuntimeError};
use crate::team::{slice_bounds, ThreadPlan};

pub const ALIGN: usize = 64;

#[derive(Debug, Error)]
pub enum DArrayError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("could not allocate {bytes} bytes for the local buffer")]
    AllocationFailure { bytes: usize },
    #[error("array belongs to pid {array} but comm is pid {comm}")]
    PidMismatch { array: usize, comm: usize },
    #[error("halo payload from pid {from}: expected {expected} values, got {got} bytes")]
    MalformedHalo { from: usize, expected: usize, got: usize },
    #[error("halo transport corrupted: {0}")]
    ChecksumMismatch(RuntimeError),
    #[error("halo exchange timed out: {0}")]
    Timeout(RuntimeError),
    #[error(transparent)]
    Runtime(RuntimeError),
}

impl From<RuntimeError> for DArrayError {
    fn from(e: RuntimeError) -> Self {
        match e {
            RuntimeError::CorruptPayload { .. } => DArrayError::ChecksumMismatch(e),
            RuntimeError::Timeout { .. } => DArrayError::Timeout(e),
            other => DArrayError::Runtime(other),
        }
    }
}

/// Heap slab of `f64` aligned to [`ALIGN`] bytes.
pub struct AlignedBuf {
    ptr: NonNull<f64>,
    len: usize,
}

// SAFETY: AlignedBuf uniquely owns its allocation, like Vec<f64>.
unsafe impl Send for AlignedBuf {}
unsafe impl Sync for AlignedBuf {}

#[derive(Clone, Copy)]
struct SendPtr(*mut f64);
// SAFETY: only used to hand disjoint ranges of one allocation to scoped threads.
unsafe impl Send for SendPtr {}
unsafe impl Sync for SendPtr {}

impl AlignedBuf {
    fn layout(len: usize) -> Option<Layout> {
        let bytes = len.checked_mul(std::mem::size_of::<f64>())?;
        Layout::from_size_align(bytes, ALIGN).ok()
    }

    /// Allocates `len` zeroed elements; each thread of `plan` zeroes the
    /// slice of `0..touch_len` it will later compute on, the rest is zeroed by
    /// the caller's thread.
    fn zeroed(len: usize, touch_len: usize, plan: &ThreadPlan) -> Result<Self, DArrayError> {
        let bytes = len.saturating_mul(std::mem::size_of::<f64>());
        let layout = Self::layout(len).ok_or(DArrayError::AllocationFailure { bytes })?;
        if len == 0 {
            return Ok(AlignedBuf { ptr: NonNull::dangling(), len: 0 });
        }
        // SAFETY: layout has nonzero size.
        let raw = unsafe { alloc::alloc(layout) } as *mut f64;
        let ptr = NonNull::new(raw).ok_or(DArrayError::AllocationFailure { bytes })?;
        let base = SendPtr(ptr.as_ptr());
        let touch_len = touch_len.min(len);
        if plan.threads <= 1 {
            // SAFETY: the whole allocation is writable.
            unsafe { std::ptr::write_bytes(base.0, 0, len) };
        } else {
            thread::scope(|s| {
                for (t, r) in slice_bounds(touch_len, plan.threads).into_iter().enumerate() {
                    s.spawn(move || {
                        plan.pin_worker(t);
                        let base = base;
                        // SAFETY: ranges from slice_bounds are disjoint and in bounds.
                        unsafe { std::ptr::write_bytes(base.0.add(r.start), 0, r.len()) };
                    });
                }
            });
            // SAFETY: tail after the touched prefix is in bounds.
            unsafe { std::ptr::write_bytes(base.0.add(touch_len), 0, len - touch_len) };
        }
        Ok(AlignedBuf { ptr, len })
    }

    pub fn as_ptr(&self) -> *const f64 {
        self.ptr.as_ptr()
    }
}

impl Deref for AlignedBuf {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        // SAFETY: ptr is valid for len initialized elements (zeroed at allocation).
        unsafe { std::slice::from_raw_parts(self.ptr.as_ptr(), self.len) }
    }
}

impl DerefMut for AlignedBuf {
    fn deref_mut(&mut self) -> &mut [f64] {
        // SAFETY: as above, and &mut self guarantees exclusivity.
        unsafe { std::slice::from_raw_parts_mut(self.ptr.as_ptr(), self.len) }
    }
}

impl Drop for AlignedBuf {
    fn drop(&mut self) {
        if self.len > 0 {
            let layout = Self::layout(self.len).expect("layout was valid at allocation");
            // SAFETY: allocated with this exact layout in `zeroed`.
            unsafe { alloc::dealloc(self.ptr.as_ptr().cast(), layout) };
        }
    }
}

/// One pid's piece of a distributed 2-D array of `f64`.
pub struct DArray {
    map: Map,
    dims: Index,
    pid: usize,
    extent: LocalExtent,
    buf: AlignedBuf,
}

impl fmt::Debug for DArray {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DArray")
            .field("dims", &self.dims)
            .field("pid", &self.pid)
            .field("owned_shape", &self.extent.owned_shape())
            .field("with_overlap_shape", &self.extent.with_overlap_shape())
            .finish()
    }
}

impl DArray {
    pub fn zeros(dims: Index, map: &Map, pid: usize) -> Result<Self, DArrayError> {
        Self::zeros_with(dims, map, pid, &ThreadPlan::serial())
    }

    /// Like [`DArray::zeros`], zero-filling with the threads that will run
    /// the kernels so pages land near them.
    pub fn zeros_with(dims: Index, map: &Map, pid: usize, plan: &ThreadPlan) -> Result<Self, DArrayError> {
        let extent = map.local_extent(dims, pid)?;
        let buf = AlignedBuf::zeroed(extent.with_overlap_len(), extent.owned_len(), plan)?;
        Ok(DArray { map: map.clone(), dims, pid, extent, buf })
    }

    pub fn map(&self) -> &Map {
        &self.map
    }

    pub fn dims(&self) -> Index {
        self.dims
    }

    pub fn pid(&self) -> usize {
        self.pid
    }

    pub fn extent(&self) -> &LocalExtent {
        &self.extent
    }

    /// Number of owned elements.
    pub fn local_len(&self) -> usize {
        self.extent.owned_len()
    }

    pub fn allocated_bytes(&self) -> usize {
        self.buf.len() * std::mem::size_of::<f64>()
    }

    /// The owned elements, excluding any halo.
    pub fn local_view(&self) -> &[f64] {
        &self.buf[..self.extent.owned_len()]
    }

    pub fn local_view_mut(&mut self) -> &mut [f64] {
        let n = self.extent.owned_len();
        &mut self.buf[..n]
    }

    pub fn halo(&self) -> &[f64] {
        &self.buf[self.extent.owned_len()..]
    }

    /// The whole local buffer: owned elements, then halo.
    pub fn buffer(&self) -> &[f64] {
        &self.buf
    }

    pub fn buffer_mut(&mut self) -> &mut [f64] {
        &mut self.buf
    }

    /// Sets every local element, halo included.
    pub fn fill(&mut self, value: f64) {
        self.buf.fill(value);
    }

    /// Parallel [`DArray::fill`] over the same slices as the kernels.
    pub fn fill_with(&mut self, value: f64, plan: &ThreadPlan) {
        if plan.threads <= 1 {
            return self.fill(value);
        }
        let owned = self.extent.owned_len();
        let (own, halo) = self.buf.split_at_mut(owned);
        let bounds = slice_bounds(owned, plan.threads);
        thread::scope(|s| {
            for (t, piece) in crate::team::split_mut(own, &bounds).into_iter().enumerate() {
                s.spawn(move || {
                    plan.pin_worker(t);
                    piece.fill(value);
                });
            }
        });
        halo.fill(value);
    }

    /// Correctly rounded sum of the owned elements.
    pub fn checksum(&self) -> f64 {
        self.checksum_sum().value()
    }

    /// Exact running sum of the owned elements, for combining across pids.
    pub fn checksum_sum(&self) -> ExactSum {
        self.local_view().iter().copied().collect()
    }

    fn offset_of(&self, index: Index) -> Result<usize, MapError> {
        let local = self.map.global_to_local(self.dims, self.pid, index)?;
        Ok(self.extent.buffer_offset(local).expect("local index inside extent"))
    }

    /// Element at a global index stored on this pid (owned or halo).
    pub fn get(&self, index: Index) -> Result<f64, MapError> {
        self.offset_of(index).map(|o| self.buf[o])
    }

    pub fn set(&mut self, index: Index, value: f64) -> Result<(), MapError> {
        let o = self.offset_of(index)?;
        self.buf[o] = value;
        Ok(())
    }

    /// Global index of owned element `pos` of [`DArray::local_view`].
    pub fn owned_global(&self, pos: usize) -> Option<Index> {
        (pos < self.extent.owned_len()).then(|| self.extent.global_at_offset(pos)).flatten()
    }

    /// Refreshes halo elements from the pids that own them.
    ///
    /// Every pid of the map must call this collectively, in the same order
    /// relative to other sequenced [`Comm`] operations.
    pub fn sync_overlap(&mut self, comm: &Comm) -> Result<(), DArrayError> {
        if !self.map.has_overlap() {
            return Ok(());
        }
        if comm.pid() != self.pid {
            return Err(DArrayError::PidMismatch { array: self.pid, comm: comm.pid() });
        }
        let phase = format!("halo{}", comm.next_seq());

        let exports = export_indices(&self.map, self.dims, self.pid)?;
        let mut payload = Vec::with_capacity(exports.len() * 8);
        for &g in &exports {
            payload.extend_from_slice(&self.get(g)?.to_le_bytes());
        }
        comm.publish(&phase, &payload)?;

        let halo = self.extent.halo_globals();
        let owners: Vec<usize> = halo.iter().map(|&g| self.map.owner(self.dims, g)).collect::<Result<_, _>>()?;
        let senders: BTreeSet<usize> = owners.iter().copied().collect();
        let owned_len = self.extent.owned_len();
        for from in senders {
            let their_exports = export_indices(&self.map, self.dims, from)?;
            let bytes = comm.fetch(&phase, from)?;
            if bytes.len() != their_exports.len() * 8 {
                return Err(DArrayError::MalformedHalo { from, expected: their_exports.len(), got: bytes.len() });
            }
            for (k, (&g, &owner)) in halo.iter().zip(&owners).enumerate() {
                if owner != from {
                    continue;
                }
                let at = their_exports.binary_search(&g).expect("owner exports every halo index it owns");
                let v = f64::from_le_bytes(bytes[at * 8..at * 8 + 8].try_into().unwrap());
                self.buf[owned_len + k] = v;
            }
        }
        Ok(())
    }
}

/// Owned indices of `pid` that appear in any other pid's halo, sorted.
fn export_indices(map: &Map, dims: Index, pid: usize) -> Result<Vec<Index>, MapError> {
    let mut out = BTreeSet::new();
    for &other in map.pids() {
        if other == pid {
            continue;
        }
        for g in map.local_extent(dims, other)?.halo_globals() {
            if map.owner(dims, g)? == pid {
                out.insert(g);
            }
        }
    }
    Ok(out.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dmap::DistSpec;

    #[test]
    fn zeros_examples() {
        let serial = DArray::zeros([1, 8], &Map::serial(), 0).unwrap();
        assert_eq!(serial.local_view(), &[0.0; 8]);
        let cyclic = Map::row(2, DistSpec::CYCLIC, 0).unwrap();
        for pid in 0..2 {
            assert_eq!(DArray::zeros([1, 8], &cyclic, pid).unwrap().local_len(), 4);
        }
        assert!(matches!(
            DArray::zeros([1, 1], &cyclic, 0),
            Err(DArrayError::Map(MapError::DimensionTooSmall { .. }))
        ));
    }

    #[test]
    fn buffer_is_cache_line_aligned() {
        for threads in [1, 3] {
            let a = DArray::zeros_with([1, 1000], &Map::serial(), 0, &ThreadPlan::new(threads)).unwrap();
            assert_eq!(a.buffer().as_ptr() as usize % ALIGN, 0);
            assert!(a.buffer().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn allocation_failure_reports_bytes() {
        let huge = usize::MAX / 4;
        match DArray::zeros([1, huge], &Map::serial(), 0) {
            Err(DArrayError::AllocationFailure { bytes }) => assert!(bytes >= huge),
            other => panic!("expected allocation failure, got {other:?}"),
        }
    }

    #[test]
    fn local_view_examples() {
        let block = Map::row(2, DistSpec::BLOCK, 0).unwrap();
        let mut a = DArray::zeros([1, 8], &block, 1).unwrap();
        for (i, x) in a.local_view_mut().iter_mut().enumerate() {
            *x = i as f64;
        }
        let globals: Vec<usize> = (0..4).map(|p| a.owned_global(p).unwrap()[1]).collect();
        assert_eq!(globals, vec![4, 5, 6, 7]);
        assert_eq!(a.get([0, 6]).unwrap(), 2.0);
        assert!(matches!(a.get([0, 1]), Err(MapError::NotLocal { .. })));

        let halo = Map::row(2, DistSpec::BLOCK, 1).unwrap();
        let h = DArray::zeros([1, 8], &halo, 0).unwrap();
        assert_eq!(h.local_view().len(), 4);
        assert_eq!(h.buffer().len(), 5);
        assert_eq!(h.allocated_bytes(), 40);
    }

    #[test]
    fn fill_and_checksum() {
        let mut a = DArray::zeros([1, 8], &Map::serial(), 0).unwrap();
        assert_eq!(a.checksum(), 0.0);
        a.fill(2.0);
        assert_eq!(a.checksum(), 16.0);
        a.fill_with(1.0, &ThreadPlan::new(3));
        assert!(a.local_view().iter().all(|&x| x == 1.0));
        a.fill(0.0);
        let fresh = DArray::zeros([1, 8], &Map::serial(), 0).unwrap();
        assert_eq!(a.buffer(), fresh.buffer());

        let halo = Map::row(2, DistSpec::BLOCK, 1).unwrap();
        let mut h = DArray::zeros([1, 8], &halo, 0).unwrap();
        h.fill(3.0);
        assert_eq!(h.halo(), &[3.0]);
        // halo excluded from checksum
        assert_eq!(h.checksum(), 12.0);
    }

    #[test]
    fn exports_are_left_neighbours_boundary() {
        let m = Map::row(4, DistSpec::BLOCK, 1).unwrap();
        assert_eq!(export_indices(&m, [1, 16], 0).unwrap(), Vec::<[usize; 2]>::new());
        assert_eq!(export_indices(&m, [1, 16], 1).unwrap(), vec![[0, 4]]);
        assert_eq!(export_indices(&m, [1, 16], 3).unwrap(), vec![[0, 12]]);
    }
}
