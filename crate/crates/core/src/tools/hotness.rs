//! Time-series access hotness over fixed 2 MiB virtual address blocks.

use std::any::Any;
use std::collections::BTreeMap;

use serde::Serialize;

use crate::engine::DispatchRecord;
use crate::event::{Event, EventPayload, MemSpace};
use crate::tool::{AccessSink, Tool, ToolContext, ToolDescriptor, ToolError, ToolFactory};

use super::{run_tool_over, Report};

/// Hotness block granularity; matches the paging granularity used elsewhere.
pub const HOTNESS_BLOCK_BYTES: u64 = 2 * 1024 * 1024;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HotnessMatrix {
    pub window_len_ns: u64,
    pub block_size_bytes: u64,
    /// Column order: block base addresses, ascending.
    pub block_bases: Vec<u64>,
    /// `counts[window][column]` = global accesses to that block in that
    /// window. Windows are indexed from the first in-scope event timestamp.
    pub counts: Vec<Vec<u64>>,
    pub total_accesses: u64,
}

impl HotnessMatrix {
    pub fn windows(&self) -> usize {
        self.counts.len()
    }

    pub fn sum(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Row of per-window counts for the block containing `address`.
    pub fn row_for_address(&self, address: u64) -> Option<Vec<u64>> {
        let base = (address / self.block_size_bytes) * self.block_size_bytes;
        let col = self.block_bases.iter().position(|b| *b == base)?;
        Some(self.counts.iter().map(|row| row[col]).collect())
    }
}

#[derive(Default)]
struct Cells {
    cells: BTreeMap<(u64, u64), u64>, // (window, block base) -> count
    total: u64,
}

impl Cells {
    fn record(&mut self, base_ns: u64, window_len_ns: u64, timestamp_ns: u64, address: u64) {
        let window = timestamp_ns.saturating_sub(base_ns) / window_len_ns;
        let block = (address / HOTNESS_BLOCK_BYTES) * HOTNESS_BLOCK_BYTES;
        *self.cells.entry((window, block)).or_insert(0) += 1;
        self.total += 1;
    }

    fn merge(&mut self, other: Cells) {
        for (key, count) in other.cells {
            *self.cells.entry(key).or_insert(0) += count;
        }
        self.total += other.total;
    }
}

struct HotnessSink {
    base_ns: u64,
    window_len_ns: u64,
    cells: Cells,
}

impl AccessSink for HotnessSink {
    fn on_access(&mut self, rec: &DispatchRecord) {
        if let EventPayload::MemAccess(info) = &rec.event.payload {
            if info.space == MemSpace::Global {
                self.cells.record(
                    self.base_ns,
                    self.window_len_ns,
                    rec.event.timestamp_ns,
                    info.address,
                );
            }
        }
    }
    fn into_any(self: Box<Self>) -> Box<dyn Any + Send> {
        self
    }
}

pub struct HotnessTool {
    window_len_ns: u64,
    /// Timestamp of the first in-scope event; the origin of window 0.
    base_ns: Option<u64>,
    cells: Cells,
}

impl HotnessTool {
    pub fn new(window_len_ns: u64) -> Self {
        HotnessTool {
            window_len_ns: window_len_ns.max(1),
            base_ns: None,
            cells: Cells::default(),
        }
    }

    fn observe_base(&mut self, rec: &DispatchRecord) {
        if self.base_ns.is_none() {
            self.base_ns = Some(rec.event.timestamp_ns);
        }
    }
}

impl Tool for HotnessTool {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: "hotness",
            needs_device_ops: true,
            mergeable: true,
        }
    }

    fn on_kernel_launch(&mut self, rec: &DispatchRecord) -> Result<(), ToolError> {
        self.observe_base(rec);
        Ok(())
    }
    fn on_kernel_complete(&mut self, rec: &DispatchRecord) -> Result<(), ToolError> {
        self.observe_base(rec);
        Ok(())
    }
    fn on_mem_copy(&mut self, rec: &DispatchRecord) -> Result<(), ToolError> {
        self.observe_base(rec);
        Ok(())
    }
    fn on_tensor_event(&mut self, rec: &DispatchRecord) -> Result<(), ToolError> {
        self.observe_base(rec);
        Ok(())
    }
    fn on_object_event(&mut self, rec: &DispatchRecord) -> Result<(), ToolError> {
        self.observe_base(rec);
        Ok(())
    }
    fn on_op_boundary(&mut self, rec: &DispatchRecord) -> Result<(), ToolError> {
        self.observe_base(rec);
        Ok(())
    }
    fn on_range(&mut self, rec: &DispatchRecord) -> Result<(), ToolError> {
        self.observe_base(rec);
        Ok(())
    }
    fn on_other(&mut self, rec: &DispatchRecord) -> Result<(), ToolError> {
        self.observe_base(rec);
        Ok(())
    }

    fn on_mem_access(&mut self, rec: &DispatchRecord) -> Result<(), ToolError> {
        self.observe_base(rec);
        if let EventPayload::MemAccess(info) = &rec.event.payload {
            if info.space == MemSpace::Global {
                let base = self.base_ns.unwrap_or(rec.event.timestamp_ns);
                self.cells.record(
                    base,
                    self.window_len_ns,
                    rec.event.timestamp_ns,
                    info.address,
                );
            }
        }
        Ok(())
    }

    fn make_access_sink(&self) -> Option<Box<dyn AccessSink>> {
        // Valid streams open with a serialized event (a kernel must launch
        // before its accesses), so the window origin is known by the time the
        // first batch is cut.
        Some(Box::new(HotnessSink {
            base_ns: self.base_ns.unwrap_or(0),
            window_len_ns: self.window_len_ns,
            cells: Cells::default(),
        }))
    }

    fn merge_access_sink(&mut self, sink: Box<dyn AccessSink>) -> Result<(), ToolError> {
        let sink = sink
            .into_any()
            .downcast::<HotnessSink>()
            .map_err(|_| ToolError::Failed("foreign access sink".into()))?;
        self.cells.merge(sink.cells);
        Ok(())
    }

    fn on_finalize(&mut self) -> Result<Report, ToolError> {
        let cells = std::mem::take(&mut self.cells);
        let block_bases: Vec<u64> = {
            let mut bases: Vec<u64> = cells.cells.keys().map(|(_, b)| *b).collect();
            bases.sort_unstable();
            bases.dedup();
            bases
        };
        let windows = cells.cells.keys().map(|(w, _)| w + 1).max().unwrap_or(0) as usize;
        let mut counts = vec![vec![0u64; block_bases.len()]; windows];
        for ((window, block), count) in cells.cells {
            let col = block_bases
                .binary_search(&block)
                .expect("block base collected");
            counts[window as usize][col] = count;
        }
        Ok(Report::Hotness(HotnessMatrix {
            window_len_ns: self.window_len_ns,
            block_size_bytes: HOTNESS_BLOCK_BYTES,
            block_bases,
            counts,
            total_accesses: cells.total,
        }))
    }
}

pub(super) struct Factory;

impl ToolFactory for Factory {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: "hotness",
            needs_device_ops: true,
            mergeable: true,
        }
    }
    fn build(&self, ctx: &ToolContext) -> Result<Box<dyn Tool>, ToolError> {
        Ok(Box::new(HotnessTool::new(ctx.hotness_window_ns)))
    }
}

/// One-shot hotness analysis.
pub fn hotness(events: &[Event], window_len_ns: u64) -> HotnessMatrix {
    let mut tool = HotnessTool::new(window_len_ns);
    match run_tool_over(events, &mut tool) {
        Ok(Report::Hotness(matrix)) => matrix,
        _ => unreachable!("hotness callbacks are infallible"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{EventKind, KernelLaunchInfo, MemAccessInfo};

    fn launch_at(seq: u64, ts: u64, grid_id: u64) -> Event {
        Event {
            seq,
            device: 0,
            timestamp_ns: ts,
            kind: EventKind::KernelLaunch,
            payload: EventPayload::KernelLaunch(KernelLaunchInfo {
                kernel_name: "k".into(),
                grid_id,
                grid_dims: (1, 1, 1),
                block_dims: (32, 1, 1),
                stream: 0,
                arg_objects: vec![],
            }),
            stack: None,
        }
    }

    fn access_at(seq: u64, ts: u64, grid_id: u64, address: u64) -> Event {
        Event {
            seq,
            device: 0,
            timestamp_ns: ts,
            kind: EventKind::GlobalAccess,
            payload: EventPayload::MemAccess(MemAccessInfo {
                grid_id,
                address,
                size_bytes: 32,
                is_write: false,
                space: MemSpace::Global,
            }),
            stack: None,
        }
    }

    #[test]
    fn single_access_lands_in_window_zero_block_three() {
        let events = vec![
            launch_at(0, 0, 0),
            access_at(1, 10, 0, 3 * HOTNESS_BLOCK_BYTES + 64),
        ];
        let matrix = hotness(&events, 1_000_000);
        assert_eq!(matrix.windows(), 1);
        assert_eq!(matrix.block_bases, vec![3 * HOTNESS_BLOCK_BYTES]);
        assert_eq!(matrix.counts[0][0], 1);
        assert_eq!(matrix.sum(), 1);
    }

    #[test]
    fn matrix_sum_equals_global_access_count() {
        let mut events = vec![launch_at(0, 0, 0)];
        let mut seq = 1;
        for i in 0..100u64 {
            events.push(access_at(seq, i * 10_000, 0, (i % 5) * HOTNESS_BLOCK_BYTES));
            seq += 1;
        }
        let matrix = hotness(&events, 100_000);
        assert_eq!(matrix.sum(), 100);
        assert_eq!(matrix.total_accesses, 100);
    }

    #[test]
    fn persistent_rows_have_no_gaps_transient_rows_do() {
        let persistent = 0x0;
        let transient = 10 * HOTNESS_BLOCK_BYTES;
        let window = 1_000u64;
        let mut events = vec![launch_at(0, 0, 0)];
        let mut seq = 1;
        // persistent block touched every window; transient only in windows 3-4
        for w in 0..8u64 {
            events.push(access_at(seq, w * window + 10, 0, persistent));
            seq += 1;
            if w == 3 || w == 4 {
                events.push(access_at(seq, w * window + 20, 0, transient));
                seq += 1;
            }
        }
        let matrix = hotness(&events, window);
        let prow = matrix.row_for_address(persistent).unwrap();
        let trow = matrix.row_for_address(transient).unwrap();
        assert!(
            prow.iter().all(|c| *c > 0),
            "persistent row has a zero: {prow:?}"
        );
        for (w, count) in trow.iter().enumerate() {
            if w == 3 || w == 4 {
                assert!(*count > 0);
            } else {
                assert_eq!(*count, 0, "transient row hot outside its burst: {trow:?}");
            }
        }
    }
}
