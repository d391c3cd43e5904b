//! Access profiling for the paging simulator: which objects and tensors each
//! kernel actually touched, with counts. The prefetch planner consumes this.

use std::any::Any;
use std::collections::BTreeMap;

use serde::Serialize;

use crate::engine::{DispatchRecord, Resolution};
use crate::event::{Event, EventPayload};
use crate::tool::{AccessSink, Tool, ToolContext, ToolDescriptor, ToolError, ToolFactory};

use super::{run_tool_over, Report};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TensorTouch {
    pub tensor_id: u64,
    pub address: u64,
    pub size_bytes: u64,
    pub access_count: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ObjectTouch {
    pub object_id: u64,
    pub base: u64,
    pub size_bytes: u64,
    pub access_count: u64,
    pub tensors: Vec<TensorTouch>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct KernelProfile {
    pub device: u32,
    pub grid_id: u64,
    pub kernel_name: String,
    pub objects: Vec<ObjectTouch>,
}

/// Per-kernel touched objects and tensors, in launch order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AccessProfile {
    pub kernels: Vec<KernelProfile>,
}

#[derive(Debug, Default)]
struct ProfileState {
    // (device, grid) -> object id -> touch
    kernels: BTreeMap<(u32, u64), BTreeMap<u64, ObjectTouchState>>,
}

#[derive(Debug)]
struct ObjectTouchState {
    base: u64,
    size: u64,
    count: u64,
    tensors: BTreeMap<u64, TensorTouch>,
}

impl ProfileState {
    fn absorb(&mut self, rec: &DispatchRecord) {
        let (EventPayload::MemAccess(info), Resolution::Object(obj)) =
            (&rec.event.payload, &rec.resolution)
        else {
            return;
        };
        let objects = self
            .kernels
            .entry((rec.event.device, info.grid_id))
            .or_default();
        let touch = objects
            .entry(obj.object_id)
            .or_insert_with(|| ObjectTouchState {
                base: obj.base,
                size: obj.size,
                count: 0,
                tensors: BTreeMap::new(),
            });
        touch.count += 1;
        if let Some(tensor) = obj.tensor {
            touch
                .tensors
                .entry(tensor.tensor_id)
                .or_insert_with(|| TensorTouch {
                    tensor_id: tensor.tensor_id,
                    address: tensor.address,
                    size_bytes: tensor.size,
                    access_count: 0,
                })
                .access_count += 1;
        }
    }

    fn merge(&mut self, other: ProfileState) {
        for (scope, objects) in other.kernels {
            let mine = self.kernels.entry(scope).or_default();
            for (object_id, touch) in objects {
                match mine.entry(object_id) {
                    std::collections::btree_map::Entry::Vacant(slot) => {
                        slot.insert(touch);
                    }
                    std::collections::btree_map::Entry::Occupied(mut slot) => {
                        let existing = slot.get_mut();
                        existing.count += touch.count;
                        for (tensor_id, t) in touch.tensors {
                            existing
                                .tensors
                                .entry(tensor_id)
                                .and_modify(|e| e.access_count += t.access_count)
                                .or_insert(t);
                        }
                    }
                }
            }
        }
    }
}

struct ProfileSink(ProfileState);

impl AccessSink for ProfileSink {
    fn on_access(&mut self, rec: &DispatchRecord) {
        self.0.absorb(rec);
    }
    fn into_any(self: Box<Self>) -> Box<dyn Any + Send> {
        self
    }
}

pub struct UvmProfileTool {
    launches: BTreeMap<(u32, u64), String>,
    state: ProfileState,
}

impl UvmProfileTool {
    pub fn new() -> Self {
        UvmProfileTool {
            launches: BTreeMap::new(),
            state: ProfileState::default(),
        }
    }
}

impl Default for UvmProfileTool {
    fn default() -> Self {
        Self::new()
    }
}

impl Tool for UvmProfileTool {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: "uvm-profile",
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

    fn on_mem_access(&mut self, rec: &DispatchRecord) -> Result<(), ToolError> {
        self.state.absorb(rec);
        Ok(())
    }

    fn make_access_sink(&self) -> Option<Box<dyn AccessSink>> {
        Some(Box::new(ProfileSink(ProfileState::default())))
    }

    fn merge_access_sink(&mut self, sink: Box<dyn AccessSink>) -> Result<(), ToolError> {
        let sink = sink
            .into_any()
            .downcast::<ProfileSink>()
            .map_err(|_| ToolError::Failed("foreign access sink".into()))?;
        self.state.merge(sink.0);
        Ok(())
    }

    fn on_finalize(&mut self) -> Result<Report, ToolError> {
        let mut kernels = Vec::with_capacity(self.launches.len());
        for ((device, grid_id), kernel_name) in &self.launches {
            let objects = match self.state.kernels.get(&(*device, *grid_id)) {
                Some(objects) => objects
                    .iter()
                    .map(|(object_id, touch)| ObjectTouch {
                        object_id: *object_id,
                        base: touch.base,
                        size_bytes: touch.size,
                        access_count: touch.count,
                        tensors: touch.tensors.values().cloned().collect(),
                    })
                    .collect(),
                None => Vec::new(),
            };
            kernels.push(KernelProfile {
                device: *device,
                grid_id: *grid_id,
                kernel_name: kernel_name.clone(),
                objects,
            });
        }
        Ok(Report::AccessProfile(AccessProfile { kernels }))
    }
}

pub(super) struct Factory;

impl ToolFactory for Factory {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: "uvm-profile",
            needs_device_ops: true,
            mergeable: true,
        }
    }
    fn build(&self, _ctx: &ToolContext) -> Result<Box<dyn Tool>, ToolError> {
        Ok(Box::new(UvmProfileTool::new()))
    }
}

/// One-shot access profiling over an event slice.
pub fn access_profile(events: &[Event]) -> AccessProfile {
    let mut tool = UvmProfileTool::new();
    match run_tool_over(events, &mut tool) {
        Ok(Report::AccessProfile(profile)) => profile,
        _ => unreachable!("uvm-profile callbacks are infallible"),
    }
}
