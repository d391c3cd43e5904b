//! Unified event taxonomy and stream validation.
//!
//! Every backend dialect is normalized into [`Event`] records before analysis:
//! one sequence number space per trace, nanosecond timestamps, positive sizes,
//! and a typed payload per event kind. Analysis code downstream never sees
//! vendor-specific encodings.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Top-level grouping of event kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventCategory {
    /// Coarse-grained API calls issued from the host.
    HostApi,
    /// Fine-grained operations observed on the device.
    DeviceOp,
    /// High-level framework events (operators, tensors, annotations).
    Framework,
}

/// Every event kind understood by the framework.
///
/// `KernelComplete` is not something real profiling backends report as a
/// distinct callback; traces carry it explicitly so tools and the paging
/// simulator can bound kernel durations without inferring them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    // Host-called API events
    DriverCall,
    RuntimeCall,
    Sync,
    KernelLaunch,
    KernelComplete,
    MemCopy,
    MemSet,
    ResourceOp,
    BatchMemOp,
    DeviceMalloc,
    DeviceFree,
    // Device-side operations
    BlockEnter,
    BlockExit,
    GlobalAccess,
    SharedAccess,
    Barrier,
    FuncCall,
    FuncReturn,
    DeviceSideMalloc,
    DeviceSideFree,
    GlobalToSharedCopy,
    PipelineCommit,
    PipelineWait,
    RemoteSharedAccess,
    ClusterBarrier,
    Instruction,
    // Framework events
    OperatorStart,
    OperatorEnd,
    TensorAlloc,
    TensorReclaim,
    RangeStart,
    RangeEnd,
}

impl EventKind {
    /// All kinds, in declaration order. Useful for exhaustive tests and
    /// for the binary wire tags, which are derived from this ordering.
    pub const ALL: [EventKind; 32] = [
        EventKind::DriverCall,
        EventKind::RuntimeCall,
        EventKind::Sync,
        EventKind::KernelLaunch,
        EventKind::KernelComplete,
        EventKind::MemCopy,
        EventKind::MemSet,
        EventKind::ResourceOp,
        EventKind::BatchMemOp,
        EventKind::DeviceMalloc,
        EventKind::DeviceFree,
        EventKind::BlockEnter,
        EventKind::BlockExit,
        EventKind::GlobalAccess,
        EventKind::SharedAccess,
        EventKind::Barrier,
        EventKind::FuncCall,
        EventKind::FuncReturn,
        EventKind::DeviceSideMalloc,
        EventKind::DeviceSideFree,
        EventKind::GlobalToSharedCopy,
        EventKind::PipelineCommit,
        EventKind::PipelineWait,
        EventKind::RemoteSharedAccess,
        EventKind::ClusterBarrier,
        EventKind::Instruction,
        EventKind::OperatorStart,
        EventKind::OperatorEnd,
        EventKind::TensorAlloc,
        EventKind::TensorReclaim,
        EventKind::RangeStart,
        EventKind::RangeEnd,
    ];

    /// The category an event kind belongs to. Total; every kind maps to
    /// exactly one category.
    pub fn category(self) -> EventCategory {
        use EventKind::*;
        match self {
            DriverCall | RuntimeCall | Sync | KernelLaunch | KernelComplete | MemCopy | MemSet
            | ResourceOp | BatchMemOp | DeviceMalloc | DeviceFree => EventCategory::HostApi,
            BlockEnter | BlockExit | GlobalAccess | SharedAccess | Barrier | FuncCall
            | FuncReturn | DeviceSideMalloc | DeviceSideFree | GlobalToSharedCopy
            | PipelineCommit | PipelineWait | RemoteSharedAccess | ClusterBarrier | Instruction => {
                EventCategory::DeviceOp
            }
            OperatorStart | OperatorEnd | TensorAlloc | TensorReclaim | RangeStart | RangeEnd => {
                EventCategory::Framework
            }
        }
    }
}

/// See [`EventKind::category`].
pub fn category_of(kind: EventKind) -> EventCategory {
    kind.category()
}

/// Address space of a memory access.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemSpace {
    Global,
    Shared,
}

/// Transfer direction of a memory copy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CopyDirection {
    HostToDevice,
    DeviceToHost,
    DeviceToDevice,
}

/// Tensor lifecycle action. Sizes are always positive in normalized form;
/// the action flag alone distinguishes allocation from release.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorAction {
    Alloc,
    Reclaim,
}

/// Memory object lifecycle action (device-level allocation API).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectAction {
    Malloc,
    Free,
}

/// Metadata attached to a kernel launch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelLaunchInfo {
    pub kernel_name: String,
    /// Launch index on the owning device; forms the gap-free sequence
    /// 0,1,2,... per device.
    pub grid_id: u64,
    pub grid_dims: (u32, u32, u32),
    pub block_dims: (u32, u32, u32),
    pub stream: u32,
    /// Object ids passed as kernel arguments. Profiling backends cannot see
    /// actual argument values, so analyses must not trust this list: objects
    /// listed here may never be accessed.
    pub arg_objects: Vec<u64>,
}

/// Marks the end of a kernel execution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelCompleteInfo {
    pub grid_id: u64,
}

/// A device-side memory access.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemAccessInfo {
    /// Grid id of the kernel this access executes in.
    pub grid_id: u64,
    pub address: u64,
    /// 1..=128 bytes; a coalesced access segment.
    pub size_bytes: u32,
    pub is_write: bool,
    pub space: MemSpace,
}

/// A host-initiated memory copy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemCopyInfo {
    pub src_addr: u64,
    pub dst_addr: u64,
    pub size_bytes: u64,
    pub direction: CopyDirection,
}

/// Framework tensor allocation or release within a pooled memory object.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEventInfo {
    pub tensor_id: u64,
    /// Pool object containing this tensor.
    pub object_id: u64,
    pub address: u64,
    /// Always positive, regardless of the source dialect's sign convention.
    pub size_bytes: u64,
    pub action: TensorAction,
}

/// Device memory object allocation or release.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectEventInfo {
    pub object_id: u64,
    pub address: u64,
    pub size_bytes: u64,
    pub action: ObjectAction,
}

/// Operator boundary metadata.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorInfo {
    pub op_id: u64,
    pub name: String,
}

/// User annotation marker delimiting a region of interest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeMarkerInfo {
    pub range_id: u64,
    pub label: String,
}

/// Stack frame origin layer, outermost to innermost.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameLevel {
    Python,
    Framework,
    Native,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub level: FrameLevel,
    pub function: String,
    pub file: String,
    pub line: u32,
}

/// Cross-layer call stack: Python frames first, then framework, then native.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallStack {
    pub frames: Vec<Frame>,
}

/// Typed payload; the variant must match the event kind.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventPayload {
    None,
    KernelLaunch(KernelLaunchInfo),
    KernelComplete(KernelCompleteInfo),
    MemAccess(MemAccessInfo),
    MemCopy(MemCopyInfo),
    TensorEvent(TensorEventInfo),
    ObjectEvent(ObjectEventInfo),
    Operator(OperatorInfo),
    RangeMarker(RangeMarkerInfo),
}

/// A normalized runtime event: the lingua franca between trace sources,
/// the engines, and every analysis tool.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    /// Strictly increasing within a trace.
    pub seq: u64,
    pub device: u32,
    /// Nanoseconds since the trace epoch; non-decreasing per device.
    pub timestamp_ns: u64,
    pub kind: EventKind,
    pub payload: EventPayload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stack: Option<CallStack>,
}

impl Event {
    /// Grid id this event is scoped to, if it is kernel-scoped.
    pub fn grid_id(&self) -> Option<u64> {
        match &self.payload {
            EventPayload::KernelLaunch(info) => Some(info.grid_id),
            EventPayload::KernelComplete(info) => Some(info.grid_id),
            EventPayload::MemAccess(info) => Some(info.grid_id),
            _ => None,
        }
    }
}

/// Does the payload variant agree with the event kind?
pub fn payload_matches_kind(kind: EventKind, payload: &EventPayload) -> bool {
    use EventKind::*;
    match payload {
        EventPayload::KernelLaunch(_) => kind == KernelLaunch,
        EventPayload::KernelComplete(_) => kind == KernelComplete,
        EventPayload::MemAccess(info) => match info.space {
            MemSpace::Global => kind == GlobalAccess,
            MemSpace::Shared => kind == SharedAccess || kind == RemoteSharedAccess,
        },
        EventPayload::MemCopy(_) => kind == MemCopy || kind == GlobalToSharedCopy,
        EventPayload::TensorEvent(info) => match info.action {
            TensorAction::Alloc => kind == TensorAlloc,
            TensorAction::Reclaim => kind == TensorReclaim,
        },
        EventPayload::ObjectEvent(info) => match info.action {
            ObjectAction::Malloc => kind == DeviceMalloc || kind == DeviceSideMalloc,
            ObjectAction::Free => kind == DeviceFree || kind == DeviceSideFree,
        },
        EventPayload::Operator(_) => kind == OperatorStart || kind == OperatorEnd,
        EventPayload::RangeMarker(_) => kind == RangeStart || kind == RangeEnd,
        EventPayload::None => !matches!(
            kind,
            KernelLaunch
                | KernelComplete
                | GlobalAccess
                | SharedAccess
                | MemCopy
                | TensorAlloc
                | TensorReclaim
                | DeviceMalloc
                | DeviceFree
                | OperatorStart
                | OperatorEnd
                | RangeStart
                | RangeEnd
        ),
    }
}

/// A single invariant violation found in a stream. Violations are data, not
/// errors: validation never fails, it reports.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Sequence number of the offending event.
    pub seq: u64,
    pub rule: ViolationRule,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationRule {
    SeqOrder,
    TimestampOrder,
    PayloadKindMismatch,
    GridIdGap,
    KernelDims,
    AccessSize,
    AddressOverflow,
    UnknownGrid,
    TensorOutsideObject,
    TensorLifecycle,
    ObjectOverlap,
    ObjectLifecycle,
    RangeNesting,
    StackOrder,
    ZeroSize,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "seq {}: {:?}: {}", self.seq, self.rule, self.detail)
    }
}

/// Result of validating a stream; empty means valid.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Clone, Debug)]
struct LiveObjectEntry {
    object_id: u64,
    size: u64,
}

/// Incremental stream validator. Feed events in stream order; violations are
/// reported as they are discovered. [`validate_stream`] is the one-shot form.
#[derive(Debug, Default)]
pub struct StreamValidator {
    last_seq: Option<u64>,
    last_timestamp: HashMap<u32, u64>,
    next_grid_id: HashMap<u32, u64>,
    // device -> base address -> live object
    live_objects: HashMap<u32, BTreeMap<u64, LiveObjectEntry>>,
    object_device: HashMap<u64, u32>,
    live_tensors: HashSet<u64>,
    range_stack: HashMap<u32, Vec<u64>>,
}

impl StreamValidator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Observe one event, appending any violations it triggers to `out`.
    pub fn observe(&mut self, event: &Event, out: &mut Vec<Violation>) {
        let seq = event.seq;
        let push = |out: &mut Vec<Violation>, rule, detail: String| {
            out.push(Violation { seq, rule, detail });
        };

        match self.last_seq {
            Some(prev) if seq <= prev => push(
                out,
                ViolationRule::SeqOrder,
                format!("seq {seq} not greater than previous {prev}"),
            ),
            _ => {}
        }
        self.last_seq = Some(seq.max(self.last_seq.unwrap_or(0)));

        if let Some(&prev_ts) = self.last_timestamp.get(&event.device) {
            if event.timestamp_ns < prev_ts {
                push(
                    out,
                    ViolationRule::TimestampOrder,
                    format!(
                        "timestamp {} before {} on device {}",
                        event.timestamp_ns, prev_ts, event.device
                    ),
                );
            }
        }
        self.last_timestamp
            .entry(event.device)
            .and_modify(|t| *t = (*t).max(event.timestamp_ns))
            .or_insert(event.timestamp_ns);

        if !payload_matches_kind(event.kind, &event.payload) {
            push(
                out,
                ViolationRule::PayloadKindMismatch,
                format!("payload variant does not match kind {:?}", event.kind),
            );
            return;
        }

        if let Some(stack) = &event.stack {
            let mut prev = FrameLevel::Python;
            for frame in &stack.frames {
                if frame.level < prev {
                    push(
                        out,
                        ViolationRule::StackOrder,
                        format!(
                            "frame {:?} at level {:?} appears after {:?}",
                            frame.function, frame.level, prev
                        ),
                    );
                    break;
                }
                prev = frame.level;
            }
        }

        match &event.payload {
            EventPayload::KernelLaunch(info) => {
                let expected = self.next_grid_id.entry(event.device).or_insert(0);
                if info.grid_id != *expected {
                    push(
                        out,
                        ViolationRule::GridIdGap,
                        format!(
                            "grid_id {} on device {}, expected {}",
                            info.grid_id, event.device, expected
                        ),
                    );
                }
                *expected = (*expected).max(info.grid_id.saturating_add(1));
                let dims_ok = |d: (u32, u32, u32)| d.0 >= 1 && d.1 >= 1 && d.2 >= 1;
                if !dims_ok(info.grid_dims) || !dims_ok(info.block_dims) {
                    push(
                        out,
                        ViolationRule::KernelDims,
                        format!(
                            "grid {:?} / block {:?} dims must all be >= 1",
                            info.grid_dims, info.block_dims
                        ),
                    );
                }
            }
            EventPayload::KernelComplete(info) => {
                if !self.grid_launched(event.device, info.grid_id) {
                    push(
                        out,
                        ViolationRule::UnknownGrid,
                        format!(
                            "completion for grid {} not launched on device {}",
                            info.grid_id, event.device
                        ),
                    );
                }
            }
            EventPayload::MemAccess(info) => {
                if info.size_bytes == 0 || info.size_bytes > 128 {
                    push(
                        out,
                        ViolationRule::AccessSize,
                        format!("access size {} outside 1..=128", info.size_bytes),
                    );
                }
                if info
                    .address
                    .checked_add(u64::from(info.size_bytes))
                    .is_none()
                {
                    push(
                        out,
                        ViolationRule::AddressOverflow,
                        format!("access at {:#x} overflows the address space", info.address),
                    );
                }
                if !self.grid_launched(event.device, info.grid_id) {
                    push(
                        out,
                        ViolationRule::UnknownGrid,
                        format!(
                            "access references grid {} not launched on device {}",
                            info.grid_id, event.device
                        ),
                    );
                }
            }
            EventPayload::MemCopy(info) => {
                if info.size_bytes == 0 {
                    push(out, ViolationRule::ZeroSize, "copy of zero bytes".into());
                }
            }
            EventPayload::ObjectEvent(info) => match info.action {
                ObjectAction::Malloc => {
                    if info.size_bytes == 0 {
                        push(out, ViolationRule::ZeroSize, "zero-sized object".into());
                    }
                    let objects = self.live_objects.entry(event.device).or_default();
                    let end = info.address.saturating_add(info.size_bytes);
                    let overlaps = objects
                        .range(..end)
                        .next_back()
                        .map(|(base, entry)| base + entry.size > info.address)
                        .unwrap_or(false);
                    if overlaps {
                        push(
                            out,
                            ViolationRule::ObjectOverlap,
                            format!(
                                "object {} [{:#x}, {:#x}) overlaps a live object",
                                info.object_id, info.address, end
                            ),
                        );
                    }
                    objects.insert(
                        info.address,
                        LiveObjectEntry {
                            object_id: info.object_id,
                            size: info.size_bytes,
                        },
                    );
                    self.object_device.insert(info.object_id, event.device);
                }
                ObjectAction::Free => match self.object_device.remove(&info.object_id) {
                    Some(device) => {
                        if let Some(objects) = self.live_objects.get_mut(&device) {
                            objects.retain(|_, e| e.object_id != info.object_id);
                        }
                    }
                    None => push(
                        out,
                        ViolationRule::ObjectLifecycle,
                        format!("free of unknown object {}", info.object_id),
                    ),
                },
            },
            EventPayload::TensorEvent(info) => {
                if info.size_bytes == 0 {
                    push(out, ViolationRule::ZeroSize, "zero-sized tensor".into());
                }
                match info.action {
                    TensorAction::Alloc => {
                        let contained = self
                            .live_objects
                            .get(&event.device)
                            .and_then(|objects| objects.range(..=info.address).next_back())
                            .map(|(base, entry)| {
                                entry.object_id == info.object_id
                                    && info.address >= *base
                                    && info.address + info.size_bytes <= base + entry.size
                            })
                            .unwrap_or(false);
                        if !contained {
                            push(
                                out,
                                ViolationRule::TensorOutsideObject,
                                format!(
                                    "tensor {} [{:#x}, +{}) not inside live object {}",
                                    info.tensor_id, info.address, info.size_bytes, info.object_id
                                ),
                            );
                        }
                        self.live_tensors.insert(info.tensor_id);
                    }
                    TensorAction::Reclaim => {
                        if !self.live_tensors.remove(&info.tensor_id) {
                            push(
                                out,
                                ViolationRule::TensorLifecycle,
                                format!("reclaim of tensor {} with no prior alloc", info.tensor_id),
                            );
                        }
                    }
                }
            }
            EventPayload::RangeMarker(info) => {
                let stack = self.range_stack.entry(event.device).or_default();
                match event.kind {
                    EventKind::RangeStart => stack.push(info.range_id),
                    EventKind::RangeEnd => match stack.pop() {
                        Some(top) if top == info.range_id => {}
                        Some(top) => push(
                            out,
                            ViolationRule::RangeNesting,
                            format!(
                                "range {} ends while range {} is innermost",
                                info.range_id, top
                            ),
                        ),
                        None => push(
                            out,
                            ViolationRule::RangeNesting,
                            format!("range {} ends without a start", info.range_id),
                        ),
                    },
                    _ => unreachable!(),
                }
            }
            EventPayload::Operator(_) | EventPayload::None => {}
        }
    }

    fn grid_launched(&self, device: u32, grid_id: u64) -> bool {
        self.next_grid_id
            .get(&device)
            .map(|next| grid_id < *next)
            .unwrap_or(false)
    }
}

/// Validate a whole stream, returning every violation found.
pub fn validate_stream<'a>(events: impl IntoIterator<Item = &'a Event>) -> ValidationReport {
    let mut validator = StreamValidator::new();
    let mut violations = Vec::new();
    for event in events {
        validator.observe(event, &mut violations);
    }
    ValidationReport { violations }
}
