//! Built-in tool collection.
//!
//! Six tools register at startup: kernel launch frequency, memory
//! characterization (working set), time-series hotness, per-device memory
//! timelines, knob-driven attribution, and the access profiler that feeds the
//! paging simulator's prefetch planner.

mod attribution;
mod hotness;
mod kernel_freq;
mod timeline;
mod uvm_profile;
mod working_set;

pub use attribution::{attribution, AttributionReport, AttributionTool, KnobWinner};
pub use hotness::{hotness, HotnessMatrix, HotnessTool, HOTNESS_BLOCK_BYTES};
pub use kernel_freq::{
    kernel_freq, kernel_freq_top_k, KernelCount, KernelFreqReport, KernelFreqTool,
};
pub use timeline::{memory_timeline, DiffPoint, MemoryTimeline, TimelinePoint, TimelineTool};
pub use uvm_profile::{
    access_profile, AccessProfile, KernelProfile, ObjectTouch, TensorTouch, UvmProfileTool,
};
pub use working_set::{working_set, KernelFootprint, MemoryCharacteristics, WorkingSetTool};

use serde::Serialize;

use crate::engine::{preprocess, LiveObjectTable};
use crate::event::{Event, ValidationReport};
use crate::tool::{dispatch_serialized, Tool, ToolError, ToolRegistry};

/// Every report a built-in tool can produce.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Report {
    KernelFreq(KernelFreqReport),
    MemChar(MemoryCharacteristics),
    Hotness(HotnessMatrix),
    Timeline(MemoryTimeline),
    Attribution(AttributionReport),
    AccessProfile(AccessProfile),
    Violations(ValidationReport),
}

impl Report {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Report::KernelFreq(_) => "kernel-freq",
            Report::MemChar(_) => "memchar",
            Report::Hotness(_) => "hotness",
            Report::Timeline(_) => "timeline",
            Report::Attribution(_) => "attribution",
            Report::AccessProfile(_) => "uvm-profile",
            Report::Violations(_) => "validate",
        }
    }
}

/// Register the built-in tool collection.
pub fn register_builtin_tools(registry: &mut ToolRegistry) -> Result<(), ToolError> {
    registry.register(Box::new(kernel_freq::Factory))?;
    registry.register(Box::new(working_set::Factory))?;
    registry.register(Box::new(hotness::Factory))?;
    registry.register(Box::new(timeline::Factory))?;
    registry.register(Box::new(attribution::Factory))?;
    registry.register(Box::new(uvm_profile::Factory))?;
    Ok(())
}

/// Drive a tool over an in-memory event slice with serial semantics. The
/// standalone analysis functions are defined in terms of this.
pub fn run_tool_over(events: &[Event], tool: &mut dyn Tool) -> Result<Report, ToolError> {
    let needs_device_ops = tool.descriptor().needs_device_ops;
    let mut table = LiveObjectTable::new();
    for event in events {
        table.apply(event);
        let rec = preprocess(event.clone(), &table);
        if rec.is_mem_access() {
            if needs_device_ops {
                tool.on_mem_access(&rec)?;
            }
        } else {
            dispatch_serialized(tool, &rec)?;
        }
    }
    tool.on_finalize()
}

/// A no-op access sink for mergeable tools that do not consume device ops.
pub(crate) struct NullSink;

impl crate::tool::AccessSink for NullSink {
    fn on_access(&mut self, _rec: &crate::engine::DispatchRecord) {}
    fn into_any(self: Box<Self>) -> Box<dyn std::any::Any + Send> {
        self
    }
}
