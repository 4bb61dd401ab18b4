//! Page-granular allocation and translation.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::topology::GpuId;
use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PhysicalAddress {
    pub gpu: GpuId,
    pub offset: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AllocId(pub usize);

/// Identifies the process (CUDA context) that owns allocations. Sessions
/// forked from one another share a context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContextId(pub usize);

/// What the allocating process gets back: a virtual range and the GPU that
/// backs it. Physical frames stay hidden.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferHandle {
    pub id: AllocId,
    pub owner_gpu: GpuId,
    pub base_vaddr: u64,
    pub length: u64,
}

impl BufferHandle {
    pub fn end_vaddr(&self) -> u64 {
        self.base_vaddr + self.length
    }

    pub fn contains(&self, vaddr: u64) -> bool {
        vaddr >= self.base_vaddr && vaddr < self.end_vaddr()
    }

    pub fn vaddr(&self, offset: u64) -> u64 {
        self.base_vaddr + offset
    }
}

/// Ground-truth view of an allocation, including its page map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    pub id: AllocId,
    pub context: ContextId,
    pub owner_gpu: GpuId,
    pub base_vaddr: u64,
    pub length: u64,
    pub page_bytes: u64,
    page_map: Vec<u64>,
}

impl Allocation {
    /// Physical frame number backing each virtual page, in page order.
    pub fn page_map(&self) -> &[u64] {
        &self.page_map
    }

    pub fn handle(&self) -> BufferHandle {
        BufferHandle {
            id: self.id,
            owner_gpu: self.owner_gpu,
            base_vaddr: self.base_vaddr,
            length: self.length,
        }
    }
}

/// Oracle lookup of the physical address behind `offset` bytes into
/// `allocation`.
pub fn oracle_translate(allocation: &Allocation, offset: u64) -> Result<PhysicalAddress, SimError> {
    if offset >= allocation.length {
        return Err(SimError::OffsetOutOfRange {
            offset,
            length: allocation.length,
        });
    }
    let page = (offset / allocation.page_bytes) as usize;
    let frame = allocation.page_map[page];
    Ok(PhysicalAddress {
        gpu: allocation.owner_gpu,
        offset: frame * allocation.page_bytes + offset % allocation.page_bytes,
    })
}

/// Per-GPU pool of free frames. Frames are drawn uniformly at random from
/// the free ones using a generator private to the GPU, so placement on one
/// GPU does not depend on allocations made on the others.
#[derive(Debug, Clone)]
pub(crate) struct FrameAllocator {
    total: u64,
    used: HashSet<u64>,
    rng: ChaCha8Rng,
}

impl FrameAllocator {
    pub fn new(total_frames: u64, seed: u64) -> Self {
        Self {
            total: total_frames,
            used: HashSet::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn free_frames(&self) -> u64 {
        self.total - self.used.len() as u64
    }

    pub fn take(&mut self, count: u64) -> Option<Vec<u64>> {
        if count > self.free_frames() {
            return None;
        }
        let mut frames = Vec::with_capacity(count as usize);
        while (frames.len() as u64) < count {
            let f = self.rng.random_range(0..self.total);
            if self.used.insert(f) {
                frames.push(f);
            }
        }
        Some(frames)
    }
}

pub(crate) fn new_allocation(
    id: AllocId,
    context: ContextId,
    owner_gpu: GpuId,
    base_vaddr: u64,
    length: u64,
    page_bytes: u64,
    page_map: Vec<u64>,
) -> Allocation {
    Allocation {
        id,
        context,
        owner_gpu,
        base_vaddr,
        length,
        page_bytes,
        page_map,
    }
}
