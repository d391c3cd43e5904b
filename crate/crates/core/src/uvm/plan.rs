//! Profile-driven prefetch planning.
//!
//! Object granularity stages the full range of every object a kernel
//! touched; tensor granularity stages only the accessed tensors' intervals.
//! Tensor plans are always subsets of object plans built from the same
//! profile, and accesses outside any pool tensor (raw workspace buffers)
//! are covered only at object granularity.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::event::Event;
use crate::tools::access_profile;

use super::SimError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanGranularity {
    Object,
    Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct ByteRange {
    pub start: u64,
    pub len: u64,
}

impl ByteRange {
    pub fn end(&self) -> u64 {
        self.start + self.len
    }
}

/// Ranges to stage before each kernel, keyed by `(device, grid_id)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrefetchPlan {
    pub granularity: PlanGranularity,
    pub kernels: BTreeMap<(u32, u64), Vec<ByteRange>>,
}

impl PrefetchPlan {
    pub fn bytes_for(&self, device: u32, grid_id: u64) -> u64 {
        self.kernels
            .get(&(device, grid_id))
            .map(|ranges| ranges.iter().map(|r| r.len).sum())
            .unwrap_or(0)
    }

    pub fn total_bytes(&self) -> u64 {
        self.kernels.values().flatten().map(|r| r.len).sum()
    }
}

/// Build a prefetch plan from profiled events at the requested granularity.
pub fn build_prefetch_plan(
    events: &[Event],
    granularity: PlanGranularity,
) -> Result<PrefetchPlan, SimError> {
    let profile = access_profile(events);
    if profile.kernels.iter().all(|k| k.objects.is_empty()) {
        return Err(SimError::EmptyProfile);
    }
    let mut kernels = BTreeMap::new();
    for kernel in &profile.kernels {
        let mut ranges: Vec<ByteRange> = match granularity {
            PlanGranularity::Object => kernel
                .objects
                .iter()
                .filter(|o| o.access_count > 0)
                .map(|o| ByteRange {
                    start: o.base,
                    len: o.size_bytes,
                })
                .collect(),
            PlanGranularity::Tensor => kernel
                .objects
                .iter()
                .flat_map(|o| o.tensors.iter())
                .filter(|t| t.access_count > 0)
                .map(|t| ByteRange {
                    start: t.address,
                    len: t.size_bytes,
                })
                .collect(),
        };
        ranges.sort_unstable();
        kernels.insert((kernel.device, kernel.grid_id), coalesce(ranges));
    }
    Ok(PrefetchPlan {
        granularity,
        kernels,
    })
}

/// Merge overlapping or adjacent sorted ranges.
fn coalesce(ranges: Vec<ByteRange>) -> Vec<ByteRange> {
    let mut out: Vec<ByteRange> = Vec::with_capacity(ranges.len());
    for range in ranges {
        match out.last_mut() {
            Some(last) if range.start <= last.end() => {
                last.len = last.len.max(range.end() - last.start);
            }
            _ => out.push(range),
        }
    }
    out
}

/// Device capacity for an oversubscription factor: the footprint divided by
/// the factor, rounded down to a whole page.
pub fn set_capacity(
    footprint_bytes: u64,
    oversub_factor: f64,
    page_size_bytes: u64,
) -> Result<u64, SimError> {
    if oversub_factor.is_nan() || oversub_factor < 1.0 {
        return Err(SimError::BadOversubFactor);
    }
    let raw = (footprint_bytes as f64 / oversub_factor) as u64;
    Ok((raw / page_size_bytes) * page_size_bytes)
}
