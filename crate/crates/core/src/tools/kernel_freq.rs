//! Kernel invocation frequency: a map from kernel name to launch count, with
//! a top-K cut and the remainder bucketed as "Other kernels".

use std::collections::BTreeMap;

use serde::Serialize;

use crate::engine::DispatchRecord;
use crate::event::{Event, EventPayload};
use crate::tool::{AccessSink, Tool, ToolContext, ToolDescriptor, ToolError, ToolFactory};

use super::{run_tool_over, NullSink, Report};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct KernelCount {
    pub name: String,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct KernelFreqReport {
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
    /// Highest counts first; ties broken by name.
    pub top_k: Vec<KernelCount>,
    /// Launches falling outside the top-K cut ("Other kernels").
    pub other: u64,
}

pub struct KernelFreqTool {
    counts: BTreeMap<String, u64>,
    total: u64,
    k: usize,
}

impl KernelFreqTool {
    pub fn new(k: usize) -> Self {
        KernelFreqTool {
            counts: BTreeMap::new(),
            total: 0,
            k,
        }
    }
}

impl Tool for KernelFreqTool {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: "kernel-freq",
            needs_device_ops: false,
            mergeable: true,
        }
    }

    fn on_kernel_launch(&mut self, rec: &DispatchRecord) -> Result<(), ToolError> {
        if let EventPayload::KernelLaunch(info) = &rec.event.payload {
            *self.counts.entry(info.kernel_name.clone()).or_insert(0) += 1;
            self.total += 1;
        }
        Ok(())
    }

    fn make_access_sink(&self) -> Option<Box<dyn AccessSink>> {
        Some(Box::new(NullSink))
    }

    fn on_finalize(&mut self) -> Result<Report, ToolError> {
        let mut ranked: Vec<KernelCount> = self
            .counts
            .iter()
            .map(|(name, count)| KernelCount {
                name: name.clone(),
                count: *count,
            })
            .collect();
        ranked.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.name.cmp(&b.name)));
        ranked.truncate(self.k);
        let in_top: u64 = ranked.iter().map(|k| k.count).sum();
        Ok(Report::KernelFreq(KernelFreqReport {
            counts: std::mem::take(&mut self.counts),
            total: self.total,
            top_k: ranked,
            other: self.total - in_top,
        }))
    }
}

pub(super) struct Factory;

impl ToolFactory for Factory {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: "kernel-freq",
            needs_device_ops: false,
            mergeable: true,
        }
    }
    fn build(&self, ctx: &ToolContext) -> Result<Box<dyn Tool>, ToolError> {
        Ok(Box::new(KernelFreqTool::new(ctx.top_k)))
    }
}

/// One-shot kernel frequency analysis with the default top-20 cut.
pub fn kernel_freq(events: &[Event]) -> KernelFreqReport {
    kernel_freq_top_k(events, 20)
}

pub fn kernel_freq_top_k(events: &[Event], k: usize) -> KernelFreqReport {
    let mut tool = KernelFreqTool::new(k);
    match run_tool_over(events, &mut tool) {
        Ok(Report::KernelFreq(report)) => report,
        _ => unreachable!("kernel-freq callbacks are infallible"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{EventKind, KernelLaunchInfo};

    fn launch(seq: u64, name: &str, grid_id: u64) -> Event {
        Event {
            seq,
            device: 0,
            timestamp_ns: seq,
            kind: EventKind::KernelLaunch,
            payload: EventPayload::KernelLaunch(KernelLaunchInfo {
                kernel_name: name.into(),
                grid_id,
                grid_dims: (1, 1, 1),
                block_dims: (32, 1, 1),
                stream: 0,
                arg_objects: vec![],
            }),
            stack: None,
        }
    }

    #[test]
    fn counts_by_name() {
        let events = vec![
            launch(0, "gemm", 0),
            launch(1, "gemm", 1),
            launch(2, "im2col", 2),
            launch(3, "gemm", 3),
        ];
        let report = kernel_freq(&events);
        assert_eq!(report.counts["gemm"], 3);
        assert_eq!(report.counts["im2col"], 1);
        assert_eq!(report.total, 4);
        assert_eq!(report.other, 0);
    }

    #[test]
    fn empty_stream_empty_report() {
        let report = kernel_freq(&[]);
        assert!(report.counts.is_empty());
        assert_eq!(report.total, 0);
        assert!(report.top_k.is_empty());
    }

    #[test]
    fn top_k_sorted_desc_with_lexicographic_ties_and_other_bucket() {
        let mut events = Vec::new();
        let mut seq = 0;
        for (name, n) in [("zeta", 3), ("alpha", 3), ("beta", 5), ("gamma", 1)] {
            for _ in 0..n {
                events.push(launch(seq, name, seq));
                seq += 1;
            }
        }
        let report = kernel_freq_top_k(&events, 2);
        let names: Vec<&str> = report.top_k.iter().map(|k| k.name.as_str()).collect();
        // beta leads; alpha beats zeta on the tie.
        assert_eq!(names, vec!["beta", "alpha"]);
        assert_eq!(report.other, 4); // zeta 3 + gamma 1
        let sum: u64 = report.counts.values().sum();
        assert_eq!(sum, report.total);
    }
}
