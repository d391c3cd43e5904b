//! Per-device memory usage over time, stepped by tensor allocation and
//! reclamation events, with a difference series between two chosen devices.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::engine::DispatchRecord;
use crate::event::{Event, EventPayload, TensorAction};
use crate::tool::{Tool, ToolContext, ToolDescriptor, ToolError, ToolFactory};

use super::{run_tool_over, Report};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TimelinePoint {
    pub timestamp_ns: u64,
    pub live_bytes: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DiffPoint {
    pub timestamp_ns: u64,
    pub delta_bytes: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MemoryTimeline {
    /// Step series per device; each series starts at zero and every step
    /// changes by exactly one tensor event's size.
    pub devices: BTreeMap<u32, Vec<TimelinePoint>>,
    /// The two devices the difference series is computed over.
    pub diff_pair: Option<(u32, u32)>,
    /// Pointwise `first - second` after step alignment.
    pub diff: Vec<DiffPoint>,
}

impl MemoryTimeline {
    pub fn peak(&self, device: u32) -> u64 {
        self.devices
            .get(&device)
            .map(|series| series.iter().map(|p| p.live_bytes).max().unwrap_or(0))
            .unwrap_or(0)
    }
}

pub struct TimelineTool {
    pair: Option<(u32, u32)>,
    live: BTreeMap<u32, u64>,
    series: BTreeMap<u32, Vec<TimelinePoint>>,
}

impl TimelineTool {
    pub fn new(pair: Option<(u32, u32)>) -> Self {
        TimelineTool {
            pair,
            live: BTreeMap::new(),
            series: BTreeMap::new(),
        }
    }
}

impl Tool for TimelineTool {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: "timeline",
            needs_device_ops: false,
            mergeable: false,
        }
    }

    fn on_tensor_event(&mut self, rec: &DispatchRecord) -> Result<(), ToolError> {
        let EventPayload::TensorEvent(info) = &rec.event.payload else {
            return Ok(());
        };
        let device = rec.event.device;
        let live = self.live.entry(device).or_insert(0);
        let series = self.series.entry(device).or_insert_with(|| {
            vec![TimelinePoint {
                timestamp_ns: rec.event.timestamp_ns,
                live_bytes: 0,
            }]
        });
        match info.action {
            TensorAction::Alloc => *live += info.size_bytes,
            TensorAction::Reclaim => *live = live.saturating_sub(info.size_bytes),
        }
        series.push(TimelinePoint {
            timestamp_ns: rec.event.timestamp_ns,
            live_bytes: *live,
        });
        Ok(())
    }

    fn on_finalize(&mut self) -> Result<Report, ToolError> {
        let series = std::mem::take(&mut self.series);
        let pair = match self.pair {
            Some((a, b)) => {
                for device in [a, b] {
                    if !series.contains_key(&device) {
                        return Err(ToolError::UnknownDevice(device));
                    }
                }
                Some((a, b))
            }
            None => {
                let mut devices = series.keys().copied();
                match (devices.next(), devices.next()) {
                    (Some(a), Some(b)) => Some((a, b)),
                    _ => None,
                }
            }
        };
        let diff = match pair {
            Some((a, b)) => difference_series(&series[&a], &series[&b]),
            None => Vec::new(),
        };
        Ok(Report::Timeline(MemoryTimeline {
            devices: series,
            diff_pair: pair,
            diff,
        }))
    }
}

/// Align two step series on the union of their timestamps and subtract.
/// Multiple points at one timestamp collapse to the final value there.
fn difference_series(a: &[TimelinePoint], b: &[TimelinePoint]) -> Vec<DiffPoint> {
    let collapse = |series: &[TimelinePoint]| -> BTreeMap<u64, u64> {
        series
            .iter()
            .map(|p| (p.timestamp_ns, p.live_bytes))
            .collect()
    };
    let a = collapse(a);
    let b = collapse(b);
    let timestamps: std::collections::BTreeSet<u64> = a.keys().chain(b.keys()).copied().collect();
    let mut out = Vec::with_capacity(timestamps.len());
    let (mut cur_a, mut cur_b) = (0i64, 0i64);
    for ts in timestamps {
        if let Some(v) = a.get(&ts) {
            cur_a = *v as i64;
        }
        if let Some(v) = b.get(&ts) {
            cur_b = *v as i64;
        }
        out.push(DiffPoint {
            timestamp_ns: ts,
            delta_bytes: cur_a - cur_b,
        });
    }
    out
}

pub(super) struct Factory;

impl ToolFactory for Factory {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: "timeline",
            needs_device_ops: false,
            mergeable: false,
        }
    }
    fn build(&self, ctx: &ToolContext) -> Result<Box<dyn Tool>, ToolError> {
        Ok(Box::new(TimelineTool::new(ctx.timeline_devices)))
    }
}

/// One-shot timeline computation over an event slice.
pub fn memory_timeline(
    events: &[Event],
    device_pair: Option<(u32, u32)>,
) -> Result<MemoryTimeline, ToolError> {
    let mut tool = TimelineTool::new(device_pair);
    match run_tool_over(events, &mut tool)? {
        Report::Timeline(timeline) => Ok(timeline),
        _ => unreachable!("timeline tool yields timeline reports"),
    }
}
