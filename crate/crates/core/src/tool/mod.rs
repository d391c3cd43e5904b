//! The extensibility surface: tool callbacks, registration, selection, range
//! filtering, and attribution knobs.
//!
//! A tool is a set of callback overrides plus, when it supports the parallel
//! engine, a mergeable access-state factory. Built-in tools live in
//! [`crate::tools`]; new tools are added in source against the same template.

mod filter;
mod knobs;

pub use filter::{apply_range_filter, RangeFilter};
pub use knobs::{KnobMetric, Knobs, KNOB_MAX_CALLED_KERNEL, KNOB_MAX_MEM_REFERENCED_KERNEL};

use std::any::Any;
use std::collections::BTreeMap;

use thiserror::Error;

use crate::engine::DispatchRecord;
use crate::event::EventKind;
use crate::tools::Report;

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("tool `{0}` is already registered")]
    DuplicateName(String),
    #[error("unknown tool `{name}`; registered tools: {}", known.join(", "))]
    UnknownTool { name: String, known: Vec<String> },
    #[error("no tool specified (use --tool or the PASTA_TOOL environment variable)")]
    NoToolSpecified,
    #[error("unknown knob `{name}`; known knobs: {}", known.join(", "))]
    UnknownKnob { name: String, known: Vec<String> },
    #[error("no attribution knob enabled")]
    NoKnobEnabled,
    #[error("device {0} does not appear in the trace")]
    UnknownDevice(u32),
    #[error("{0}")]
    Failed(String),
}

/// Static description of a tool.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToolDescriptor {
    /// Unique, CLI-addressable name.
    pub name: &'static str,
    /// Whether the tool consumes device-side memory access events at all.
    /// The engines skip access dispatch for tools that do not.
    pub needs_device_ops: bool,
    /// Whether per-access state can be built in partitions and merged; only
    /// mergeable tools may run on the parallel engine.
    pub mergeable: bool,
}

/// Partitioned per-access state built by one parallel worker. Merging order
/// is unspecified, so accumulation must be commutative and associative.
pub trait AccessSink: Send {
    fn on_access(&mut self, rec: &DispatchRecord);
    /// Hand the state back for the owning tool to downcast and merge.
    fn into_any(self: Box<Self>) -> Box<dyn Any + Send>;
}

/// Callback template for analysis tools. Override what you need; defaults
/// ignore the event. Serialized callbacks (everything except `on_mem_access`)
/// are always invoked in stream order, on one thread. `on_mem_access` is the
/// serial-engine access path; the parallel engine instead routes accesses
/// through [`AccessSink`]s created by `make_access_sink`, which may run
/// concurrently.
#[allow(unused_variables)]
pub trait Tool: Send {
    fn descriptor(&self) -> ToolDescriptor;

    fn on_kernel_launch(&mut self, rec: &DispatchRecord) -> Result<(), ToolError> {
        Ok(())
    }
    fn on_kernel_complete(&mut self, rec: &DispatchRecord) -> Result<(), ToolError> {
        Ok(())
    }
    fn on_mem_access(&mut self, rec: &DispatchRecord) -> Result<(), ToolError> {
        Ok(())
    }
    fn on_mem_copy(&mut self, rec: &DispatchRecord) -> Result<(), ToolError> {
        Ok(())
    }
    fn on_tensor_event(&mut self, rec: &DispatchRecord) -> Result<(), ToolError> {
        Ok(())
    }
    fn on_object_event(&mut self, rec: &DispatchRecord) -> Result<(), ToolError> {
        Ok(())
    }
    fn on_op_boundary(&mut self, rec: &DispatchRecord) -> Result<(), ToolError> {
        Ok(())
    }
    fn on_range(&mut self, rec: &DispatchRecord) -> Result<(), ToolError> {
        Ok(())
    }
    /// Any event kind without a dedicated handler (sync, driver calls, ...).
    fn on_other(&mut self, rec: &DispatchRecord) -> Result<(), ToolError> {
        Ok(())
    }

    /// Present exactly when the descriptor says `mergeable`.
    fn make_access_sink(&self) -> Option<Box<dyn AccessSink>> {
        None
    }
    fn merge_access_sink(&mut self, sink: Box<dyn AccessSink>) -> Result<(), ToolError> {
        Ok(())
    }

    /// Called exactly once, after the last event.
    fn on_finalize(&mut self) -> Result<Report, ToolError>;
}

/// Route a non-access event to the matching callback.
pub fn dispatch_serialized(tool: &mut dyn Tool, rec: &DispatchRecord) -> Result<(), ToolError> {
    use EventKind::*;
    match rec.event.kind {
        KernelLaunch => tool.on_kernel_launch(rec),
        KernelComplete => tool.on_kernel_complete(rec),
        GlobalAccess | SharedAccess | RemoteSharedAccess => tool.on_mem_access(rec),
        MemCopy | GlobalToSharedCopy => tool.on_mem_copy(rec),
        TensorAlloc | TensorReclaim => tool.on_tensor_event(rec),
        DeviceMalloc | DeviceFree | DeviceSideMalloc | DeviceSideFree => tool.on_object_event(rec),
        OperatorStart | OperatorEnd => tool.on_op_boundary(rec),
        RangeStart | RangeEnd => tool.on_range(rec),
        _ => tool.on_other(rec),
    }
}

/// Per-run parameters handed to tool factories.
#[derive(Clone, Debug)]
pub struct ToolContext {
    pub knobs: Knobs,
    /// Top-K cutoff for the kernel frequency report.
    pub top_k: usize,
    /// Hotness window length in nanoseconds.
    pub hotness_window_ns: u64,
    /// Device pair for the timeline difference series; defaults to the two
    /// lowest device indices present.
    pub timeline_devices: Option<(u32, u32)>,
}

impl Default for ToolContext {
    fn default() -> Self {
        ToolContext {
            knobs: Knobs::new(),
            top_k: 20,
            hotness_window_ns: 1_000_000,
            timeline_devices: None,
        }
    }
}

/// Builds fresh tool instances for a run.
pub trait ToolFactory: Send + Sync {
    fn descriptor(&self) -> ToolDescriptor;
    fn build(&self, ctx: &ToolContext) -> Result<Box<dyn Tool>, ToolError>;
}

/// Immutable-after-startup registry of available tools.
#[derive(Default)]
pub struct ToolRegistry {
    factories: BTreeMap<String, Box<dyn ToolFactory>>,
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, factory: Box<dyn ToolFactory>) -> Result<(), ToolError> {
        let descriptor = factory.descriptor();
        let name = descriptor.name.to_string();
        if self.factories.contains_key(&name) {
            return Err(ToolError::DuplicateName(name));
        }
        self.factories.insert(name, factory);
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.factories.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.factories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factories.is_empty()
    }

    pub fn descriptor(&self, name: &str) -> Result<ToolDescriptor, ToolError> {
        self.factories
            .get(name)
            .map(|f| f.descriptor())
            .ok_or_else(|| ToolError::UnknownTool {
                name: name.to_string(),
                known: self.names(),
            })
    }

    pub fn build(&self, name: &str, ctx: &ToolContext) -> Result<Box<dyn Tool>, ToolError> {
        match self.factories.get(name) {
            Some(factory) => factory.build(ctx),
            None => Err(ToolError::UnknownTool {
                name: name.to_string(),
                known: self.names(),
            }),
        }
    }

    /// Resolve the requested tool: an explicit flag wins over the
    /// `PASTA_TOOL` environment variable.
    pub fn select(
        &self,
        cli_flag: Option<&str>,
        env_tool: Option<&str>,
    ) -> Result<ToolDescriptor, ToolError> {
        match cli_flag.or(env_tool) {
            Some(name) => self.descriptor(name),
            None => Err(ToolError::NoToolSpecified),
        }
    }
}
