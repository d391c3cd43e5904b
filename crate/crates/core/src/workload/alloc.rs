//! Pool-based caching allocator used by the workload generator.
//!
//! Mirrors the DL-framework pattern: device memory is requested in large
//! chunks via the device allocation API, then carved into tensors internally.
//! Chunks are cached for the lifetime of the run and never returned to the
//! device; tensor churn only moves segments between the live and free lists.

use std::collections::HashMap;

use thiserror::Error;

/// Tensor placements are rounded up to this many bytes.
pub const TENSOR_ALIGN: u64 = 512;
/// Chunks are multiples of this size, which also keeps chunk bases aligned to
/// the 2 MiB page/hotness granularity used elsewhere.
pub const CHUNK_GRANULE: u64 = 2 * 1024 * 1024;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AllocError {
    #[error("tensor {0} is not live")]
    UnknownTensor(u64),
}

/// A device chunk and its free segments.
#[derive(Clone, Debug)]
pub struct Chunk {
    pub object_id: u64,
    pub base: u64,
    pub size: u64,
    /// Disjoint, sorted, coalesced `(offset, len)` free segments.
    free: Vec<(u64, u64)>,
}

impl Chunk {
    pub fn free_segments(&self) -> &[(u64, u64)] {
        &self.free
    }

    pub fn free_bytes(&self) -> u64 {
        self.free.iter().map(|(_, len)| len).sum()
    }
}

/// A live tensor placement inside a chunk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorPlacement {
    pub tensor_id: u64,
    pub object_id: u64,
    pub address: u64,
    /// Rounded-up size actually reserved in the pool.
    pub size: u64,
}

/// A chunk allocation performed to satisfy a tensor request; the caller is
/// responsible for emitting the corresponding device-malloc event.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NewChunk {
    pub object_id: u64,
    pub base: u64,
    pub size: u64,
}

/// One device's memory pool.
#[derive(Debug)]
pub struct PoolAllocator {
    next_base: u64,
    chunks: Vec<Chunk>,
    live: HashMap<u64, TensorPlacement>,
}

impl PoolAllocator {
    /// `base` is the start of this device's address range; chunk bases grow
    /// upward from it and stay `CHUNK_GRANULE`-aligned.
    pub fn new(base: u64) -> Self {
        debug_assert_eq!(base % CHUNK_GRANULE, 0);
        PoolAllocator {
            next_base: base,
            chunks: Vec::new(),
            live: HashMap::new(),
        }
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn live_tensors(&self) -> impl Iterator<Item = &TensorPlacement> {
        self.live.values()
    }

    pub fn live_bytes(&self) -> u64 {
        self.live.values().map(|t| t.size).sum()
    }

    pub fn placement(&self, tensor_id: u64) -> Option<&TensorPlacement> {
        self.live.get(&tensor_id)
    }

    /// Reserve a raw chunk that never holds pool tensors (e.g. a workspace
    /// buffer allocated directly through the device API).
    pub fn alloc_raw(&mut self, object_id: u64, size: u64) -> NewChunk {
        let size = round_up(size.max(1), CHUNK_GRANULE);
        let base = self.next_base;
        self.next_base += size;
        NewChunk {
            object_id,
            base,
            size,
        }
    }

    /// Place a tensor, best-fit. Returns the placement and, if no free
    /// segment could hold it, the chunk that had to be device-malloc'd first.
    pub fn alloc_tensor(
        &mut self,
        tensor_id: u64,
        requested: u64,
        next_object_id: impl FnOnce() -> u64,
    ) -> (TensorPlacement, Option<NewChunk>) {
        let size = round_up(requested.max(1), TENSOR_ALIGN);

        // Best fit: smallest free segment that holds the request; ties go to
        // the chunk allocated first, then the lowest offset within it.
        let mut best: Option<(u64, usize, usize)> = None; // (len, chunk idx, seg idx)
        for (ci, chunk) in self.chunks.iter().enumerate() {
            for (si, &(_, len)) in chunk.free.iter().enumerate() {
                if len >= size && best.map(|(blen, ..)| len < blen).unwrap_or(true) {
                    best = Some((len, ci, si));
                }
            }
        }

        let (chunk_idx, new_chunk) = match best {
            Some((_, ci, si)) => {
                let chunk = &mut self.chunks[ci];
                let (off, len) = chunk.free[si];
                if len == size {
                    chunk.free.remove(si);
                } else {
                    chunk.free[si] = (off + size, len - size);
                }
                let placement = TensorPlacement {
                    tensor_id,
                    object_id: chunk.object_id,
                    address: chunk.base + off,
                    size,
                };
                self.live.insert(tensor_id, placement);
                return (placement, None);
            }
            None => {
                let chunk_size = round_up(size, CHUNK_GRANULE).max(CHUNK_GRANULE);
                let object_id = next_object_id();
                let base = self.next_base;
                self.next_base += chunk_size;
                let mut chunk = Chunk {
                    object_id,
                    base,
                    size: chunk_size,
                    free: Vec::new(),
                };
                if chunk_size > size {
                    chunk.free.push((size, chunk_size - size));
                }
                self.chunks.push(chunk);
                (
                    self.chunks.len() - 1,
                    Some(NewChunk {
                        object_id,
                        base,
                        size: chunk_size,
                    }),
                )
            }
        };

        let chunk = &self.chunks[chunk_idx];
        let placement = TensorPlacement {
            tensor_id,
            object_id: chunk.object_id,
            address: chunk.base,
            size,
        };
        self.live.insert(tensor_id, placement);
        (placement, new_chunk)
    }

    /// Release a tensor; its segment is returned to the owning chunk's free
    /// list and coalesced with adjacent free segments. The chunk itself stays
    /// cached.
    pub fn free_tensor(&mut self, tensor_id: u64) -> Result<TensorPlacement, AllocError> {
        let placement = self
            .live
            .remove(&tensor_id)
            .ok_or(AllocError::UnknownTensor(tensor_id))?;
        let chunk = self
            .chunks
            .iter_mut()
            .find(|c| c.object_id == placement.object_id)
            .expect("live tensor must belong to a chunk");
        let off = placement.address - chunk.base;
        let pos = chunk.free.partition_point(|&(o, _)| o < off);
        chunk.free.insert(pos, (off, placement.size));
        // Coalesce with the segment after, then the one before.
        if pos + 1 < chunk.free.len()
            && chunk.free[pos].0 + chunk.free[pos].1 == chunk.free[pos + 1].0
        {
            chunk.free[pos].1 += chunk.free[pos + 1].1;
            chunk.free.remove(pos + 1);
        }
        if pos > 0 && chunk.free[pos - 1].0 + chunk.free[pos - 1].1 == chunk.free[pos].0 {
            chunk.free[pos - 1].1 += chunk.free[pos].1;
            chunk.free.remove(pos);
        }
        Ok(placement)
    }
}

pub(crate) fn round_up(value: u64, granule: u64) -> u64 {
    value.div_ceil(granule) * granule
}
