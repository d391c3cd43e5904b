//! Memory characterization: per-kernel footprints from actually-observed
//! accesses, the run-wide working set (the largest single-kernel footprint),
//! and the overall footprint (peak simultaneous live object bytes).
//!
//! A kernel's footprint counts whole objects that received at least one
//! access while it ran. Argument objects that are never accessed contribute
//! nothing; argument lists are not trustworthy, accesses are. A
//! tensor-granularity footprint is tracked alongside for the prefetch
//! planner.

use std::any::Any;
use std::collections::BTreeMap;

use serde::Serialize;

use crate::engine::{merge_count_maps, AccessCountMap, DispatchRecord, Resolution};
use crate::event::{Event, EventPayload, ObjectAction};
use crate::tool::{AccessSink, Tool, ToolContext, ToolDescriptor, ToolError, ToolFactory};

use super::{run_tool_over, Report};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct KernelFootprint {
    pub device: u32,
    pub grid_id: u64,
    pub kernel_name: String,
    /// Bytes of objects with at least one access during this kernel.
    pub object_bytes: u64,
    /// Bytes of pool tensors with at least one access during this kernel.
    pub tensor_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemoryCharacteristics {
    pub kernel_count: u64,
    /// Peak simultaneous live object bytes over the stream.
    pub footprint_bytes: u64,
    /// Maximum per-kernel object footprint.
    pub ws_bytes: u64,
    /// Maximum per-kernel tensor footprint.
    pub ws_tensor_bytes: u64,
    pub per_kernel: Vec<KernelFootprint>,
    pub min_bytes: u64,
    pub avg_bytes: f64,
    /// Mean of the two central values for even counts.
    pub median_bytes: f64,
    /// Nearest-rank 90th percentile (1-based index ceil(0.9 n)).
    pub p90_bytes: u64,
}

/// Per-kernel access aggregation: object count map plus the object/tensor
/// sizes seen for it. Commutative merge; safe to build in partitions.
#[derive(Debug, Default)]
struct KernelAccessState {
    kernels: BTreeMap<(u32, u64), KernelAccesses>,
}

#[derive(Debug)]
struct KernelAccesses {
    counts: AccessCountMap,
    object_sizes: BTreeMap<u64, u64>,
    tensor_sizes: BTreeMap<u64, u64>,
}

impl KernelAccessState {
    fn absorb(&mut self, rec: &DispatchRecord) {
        let (EventPayload::MemAccess(info), Resolution::Object(obj)) =
            (&rec.event.payload, &rec.resolution)
        else {
            return;
        };
        let entry = self
            .kernels
            .entry((rec.event.device, info.grid_id))
            .or_insert_with(|| KernelAccesses {
                counts: AccessCountMap::new(rec.event.device, info.grid_id),
                object_sizes: BTreeMap::new(),
                tensor_sizes: BTreeMap::new(),
            });
        entry.counts.record(obj.object_id, 1);
        entry.object_sizes.insert(obj.object_id, obj.size);
        if let Some(tensor) = obj.tensor {
            entry.tensor_sizes.insert(tensor.tensor_id, tensor.size);
        }
    }

    fn merge(&mut self, other: KernelAccessState) {
        for (scope, incoming) in other.kernels {
            match self.kernels.entry(scope) {
                std::collections::btree_map::Entry::Vacant(slot) => {
                    slot.insert(incoming);
                }
                std::collections::btree_map::Entry::Occupied(mut slot) => {
                    let mine = slot.get_mut();
                    mine.counts = merge_count_maps(&mine.counts, &incoming.counts)
                        .expect("same scope by key");
                    mine.object_sizes.extend(incoming.object_sizes);
                    mine.tensor_sizes.extend(incoming.tensor_sizes);
                }
            }
        }
    }
}

struct WsSink(KernelAccessState);

impl AccessSink for WsSink {
    fn on_access(&mut self, rec: &DispatchRecord) {
        self.0.absorb(rec);
    }
    fn into_any(self: Box<Self>) -> Box<dyn Any + Send> {
        self
    }
}

pub struct WorkingSetTool {
    launches: BTreeMap<(u32, u64), String>,
    access: KernelAccessState,
    live_object_bytes: u64,
    peak_object_bytes: u64,
}

impl WorkingSetTool {
    pub fn new() -> Self {
        WorkingSetTool {
            launches: BTreeMap::new(),
            access: KernelAccessState::default(),
            live_object_bytes: 0,
            peak_object_bytes: 0,
        }
    }
}

impl Default for WorkingSetTool {
    fn default() -> Self {
        Self::new()
    }
}

impl Tool for WorkingSetTool {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: "memchar",
            needs_device_ops: true,
            mergeable: true,
        }
    }

    fn on_kernel_launch(&mut self, rec: &DispatchRecord) -> Result<(), ToolError> {
        if let EventPayload::KernelLaunch(info) = &rec.event.payload {
            self.launches
                .insert((rec.event.device, info.grid_id), info.kernel_name.clone());
        }
        Ok(())
    }

    fn on_object_event(&mut self, rec: &DispatchRecord) -> Result<(), ToolError> {
        if let EventPayload::ObjectEvent(info) = &rec.event.payload {
            match info.action {
                ObjectAction::Malloc => {
                    self.live_object_bytes += info.size_bytes;
                    self.peak_object_bytes = self.peak_object_bytes.max(self.live_object_bytes);
                }
                ObjectAction::Free => {
                    self.live_object_bytes = self.live_object_bytes.saturating_sub(info.size_bytes);
                }
            }
        }
        Ok(())
    }

    fn on_mem_access(&mut self, rec: &DispatchRecord) -> Result<(), ToolError> {
        self.access.absorb(rec);
        Ok(())
    }

    fn make_access_sink(&self) -> Option<Box<dyn AccessSink>> {
        Some(Box::new(WsSink(KernelAccessState::default())))
    }

    fn merge_access_sink(&mut self, sink: Box<dyn AccessSink>) -> Result<(), ToolError> {
        let sink = sink
            .into_any()
            .downcast::<WsSink>()
            .map_err(|_| ToolError::Failed("foreign access sink".into()))?;
        self.access.merge(sink.0);
        Ok(())
    }

    fn on_finalize(&mut self) -> Result<Report, ToolError> {
        let mut per_kernel = Vec::with_capacity(self.launches.len());
        for ((device, grid_id), kernel_name) in &self.launches {
            let (object_bytes, tensor_bytes) = match self.access.kernels.get(&(*device, *grid_id)) {
                Some(acc) => (
                    acc.object_sizes.values().sum::<u64>(),
                    acc.tensor_sizes.values().sum::<u64>(),
                ),
                None => (0, 0),
            };
            per_kernel.push(KernelFootprint {
                device: *device,
                grid_id: *grid_id,
                kernel_name: kernel_name.clone(),
                object_bytes,
                tensor_bytes,
            });
        }
        Ok(Report::MemChar(summarize(
            per_kernel,
            self.peak_object_bytes,
        )))
    }
}

fn summarize(per_kernel: Vec<KernelFootprint>, footprint_bytes: u64) -> MemoryCharacteristics {
    let mut footprints: Vec<u64> = per_kernel.iter().map(|k| k.object_bytes).collect();
    footprints.sort_unstable();
    let n = footprints.len();
    let (min_bytes, avg_bytes, median_bytes, p90_bytes) = if n == 0 {
        (0, 0.0, 0.0, 0)
    } else {
        let sum: u64 = footprints.iter().sum();
        let median = if n % 2 == 1 {
            footprints[n / 2] as f64
        } else {
            (footprints[n / 2 - 1] as f64 + footprints[n / 2] as f64) / 2.0
        };
        let p90_rank = ((0.9 * n as f64).ceil() as usize).max(1);
        (
            footprints[0],
            sum as f64 / n as f64,
            median,
            footprints[p90_rank - 1],
        )
    };
    MemoryCharacteristics {
        kernel_count: n as u64,
        footprint_bytes,
        ws_bytes: footprints.last().copied().unwrap_or(0),
        ws_tensor_bytes: per_kernel.iter().map(|k| k.tensor_bytes).max().unwrap_or(0),
        per_kernel,
        min_bytes,
        avg_bytes,
        median_bytes,
        p90_bytes,
    }
}

pub(super) struct Factory;

impl ToolFactory for Factory {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: "memchar",
            needs_device_ops: true,
            mergeable: true,
        }
    }
    fn build(&self, _ctx: &ToolContext) -> Result<Box<dyn Tool>, ToolError> {
        Ok(Box::new(WorkingSetTool::new()))
    }
}

/// One-shot memory characterization over an event slice.
pub fn working_set(events: &[Event]) -> MemoryCharacteristics {
    let mut tool = WorkingSetTool::new();
    match run_tool_over(events, &mut tool) {
        Ok(Report::MemChar(report)) => report,
        _ => unreachable!("memchar callbacks are infallible"),
    }
}
