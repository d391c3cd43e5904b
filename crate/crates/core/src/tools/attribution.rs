//! Knob-driven attribution: track the arg-max kernel per enabled knob and
//! retain a call stack only for the current winner, replacing it whenever a
//! kernel strictly exceeds the running maximum (so ties go to whichever
//! kernel reached the value first).

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::engine::DispatchRecord;
use crate::event::{CallStack, Event, EventPayload, MemSpace};
use crate::tool::{KnobMetric, Knobs, Tool, ToolContext, ToolDescriptor, ToolError, ToolFactory};

use super::{run_tool_over, Report};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct KnobWinner {
    pub kernel_name: String,
    pub value: u64,
    pub stack: Option<CallStack>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AttributionReport {
    /// Winner per enabled knob name.
    pub winners: BTreeMap<String, KnobWinner>,
}

pub struct AttributionTool {
    knobs: Vec<(String, KnobMetric)>,
    launch_counts: BTreeMap<String, u64>,
    reference_counts: BTreeMap<String, u64>,
    /// Kernel currently executing per device, with the stack its launch
    /// carried. This is the only stack retained besides the winners'.
    current: HashMap<u32, (String, Option<CallStack>)>,
    winners: BTreeMap<String, KnobWinner>,
}

impl AttributionTool {
    pub fn new(knobs: &Knobs) -> Result<Self, ToolError> {
        if !knobs.any_enabled() {
            return Err(ToolError::NoKnobEnabled);
        }
        Ok(AttributionTool {
            knobs: knobs.enabled().map(|(n, m)| (n.to_string(), m)).collect(),
            launch_counts: BTreeMap::new(),
            reference_counts: BTreeMap::new(),
            current: HashMap::new(),
            winners: BTreeMap::new(),
        })
    }

    fn challenge(&mut self, metric: KnobMetric, name: &str, value: u64, stack: &Option<CallStack>) {
        for (knob, knob_metric) in &self.knobs {
            if *knob_metric != metric {
                continue;
            }
            let beaten = self
                .winners
                .get(knob)
                .map(|w| value > w.value)
                .unwrap_or(true);
            if beaten {
                self.winners.insert(
                    knob.clone(),
                    KnobWinner {
                        kernel_name: name.to_string(),
                        value,
                        stack: clone_stack(stack),
                    },
                );
            }
        }
    }
}

fn clone_stack(stack: &Option<CallStack>) -> Option<CallStack> {
    stack.clone()
}

impl Tool for AttributionTool {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: "attribution",
            needs_device_ops: true,
            mergeable: false,
        }
    }

    fn on_kernel_launch(&mut self, rec: &DispatchRecord) -> Result<(), ToolError> {
        if let EventPayload::KernelLaunch(info) = &rec.event.payload {
            let count = self
                .launch_counts
                .entry(info.kernel_name.clone())
                .or_insert(0);
            *count += 1;
            let count = *count;
            self.current.insert(
                rec.event.device,
                (info.kernel_name.clone(), rec.event.stack.clone()),
            );
            let stack = rec.event.stack.clone();
            self.challenge(
                KnobMetric::LaunchCount,
                &info.kernel_name.clone(),
                count,
                &stack,
            );
        }
        Ok(())
    }

    fn on_mem_access(&mut self, rec: &DispatchRecord) -> Result<(), ToolError> {
        if let EventPayload::MemAccess(info) = &rec.event.payload {
            if info.space != MemSpace::Global {
                return Ok(());
            }
            let Some((name, stack)) = self.current.get(&rec.event.device).cloned() else {
                return Ok(());
            };
            let count = self.reference_counts.entry(name.clone()).or_insert(0);
            *count += 1;
            let count = *count;
            self.challenge(KnobMetric::MemReferenceCount, &name, count, &stack);
        }
        Ok(())
    }

    fn on_finalize(&mut self) -> Result<Report, ToolError> {
        Ok(Report::Attribution(AttributionReport {
            winners: std::mem::take(&mut self.winners),
        }))
    }
}

pub(super) struct Factory;

impl ToolFactory for Factory {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: "attribution",
            needs_device_ops: true,
            mergeable: false,
        }
    }
    fn build(&self, ctx: &ToolContext) -> Result<Box<dyn Tool>, ToolError> {
        Ok(Box::new(AttributionTool::new(&ctx.knobs)?))
    }
}

/// One-shot attribution over an event slice.
pub fn attribution(events: &[Event], knobs: &Knobs) -> Result<AttributionReport, ToolError> {
    let mut tool = AttributionTool::new(knobs)?;
    match run_tool_over(events, &mut tool)? {
        Report::Attribution(report) => Ok(report),
        _ => unreachable!("attribution tool yields attribution reports"),
    }
}
