//! Cross-tool consistency checks against independent scans of the same
//! trace, plus generator-level guarantees the analyses rely on.

use std::collections::BTreeMap;

use pasta_core::event::{EventKind, EventPayload, MemSpace, TensorAction};
use pasta_core::tool::{
    Knobs, ToolContext, KNOB_MAX_CALLED_KERNEL, KNOB_MAX_MEM_REFERENCED_KERNEL,
};
use pasta_core::tools::{attribution, kernel_freq, memory_timeline, register_builtin_tools};
use pasta_core::validate_stream;
use pasta_core::workload::{generate_trace, WorkloadSpec};

#[test]
fn ten_thousand_event_trace_with_seed_42_is_valid() {
    let mut spec = WorkloadSpec::cnn_toy();
    spec.seed = 42;
    let events = generate_trace(&spec).unwrap();
    assert!(events.len() >= 10_000, "only {} events", events.len());
    assert!(validate_stream(&events).is_valid());
}

#[test]
fn cached_chunks_are_never_returned_to_the_device() {
    for spec in [WorkloadSpec::cnn_toy(), WorkloadSpec::bert_toy()] {
        let events = generate_trace(&spec).unwrap();
        let frees = events
            .iter()
            .filter(|e| e.kind == EventKind::DeviceFree)
            .count();
        assert_eq!(frees, 0, "pool chunks must stay cached for the whole run");
    }
}

#[test]
fn attribution_winners_agree_with_independent_scans() {
    let events = generate_trace(&WorkloadSpec::bert_toy()).unwrap();

    let mut knobs = Knobs::new();
    knobs.enable(KNOB_MAX_CALLED_KERNEL).unwrap();
    knobs.enable(KNOB_MAX_MEM_REFERENCED_KERNEL).unwrap();
    let report = attribution(&events, &knobs).unwrap();

    // launch-count knob vs the frequency report's maximum
    let freq = kernel_freq(&events);
    let max_count = freq.counts.values().copied().max().unwrap();
    let called = &report.winners[KNOB_MAX_CALLED_KERNEL];
    assert_eq!(called.value, max_count);
    assert_eq!(freq.counts[&called.kernel_name], max_count);

    // reference-count knob vs a naive access scan attributed by grid id
    let mut names: BTreeMap<(u32, u64), String> = BTreeMap::new();
    for event in &events {
        if let EventPayload::KernelLaunch(info) = &event.payload {
            names.insert((event.device, info.grid_id), info.kernel_name.clone());
        }
    }
    let mut references: BTreeMap<String, u64> = BTreeMap::new();
    for event in &events {
        if let EventPayload::MemAccess(info) = &event.payload {
            if info.space == MemSpace::Global {
                let name = names[&(event.device, info.grid_id)].clone();
                *references.entry(name).or_insert(0) += 1;
            }
        }
    }
    let max_refs = references.values().copied().max().unwrap();
    let referenced = &report.winners[KNOB_MAX_MEM_REFERENCED_KERNEL];
    assert_eq!(referenced.value, max_refs);
    assert_eq!(references[&referenced.kernel_name], max_refs);
    assert!(
        referenced.stack.is_some(),
        "winner must retain its call stack"
    );
}

#[test]
fn timeline_returns_to_zero_when_every_tensor_is_reclaimed() {
    // Build a stream whose tensors are all reclaimed: wrap a generated
    // trace's tensor events and close out whatever stays live at the end.
    let events = generate_trace(&WorkloadSpec::cnn_toy()).unwrap();
    let mut synthetic = Vec::new();
    let mut live: BTreeMap<u64, pasta_core::event::TensorEventInfo> = BTreeMap::new();
    let mut seq = 0u64;
    let mut last_ts = 0;
    for event in &events {
        if let EventPayload::TensorEvent(info) = &event.payload {
            match info.action {
                TensorAction::Alloc => {
                    live.insert(info.tensor_id, info.clone());
                }
                TensorAction::Reclaim => {
                    live.remove(&info.tensor_id);
                }
            }
            let mut event = event.clone();
            event.seq = seq;
            seq += 1;
            last_ts = event.timestamp_ns;
            synthetic.push(event);
        }
    }
    for (_, info) in std::mem::take(&mut live) {
        let mut info = info;
        info.action = TensorAction::Reclaim;
        synthetic.push(pasta_core::event::Event {
            seq,
            device: 0,
            timestamp_ns: last_ts + 1000,
            kind: EventKind::TensorReclaim,
            payload: EventPayload::TensorEvent(info),
            stack: None,
        });
        seq += 1;
    }

    let timeline = memory_timeline(&synthetic, None).unwrap();
    for (device, series) in &timeline.devices {
        assert_eq!(
            series.last().unwrap().live_bytes,
            0,
            "device {device} does not return to zero"
        );
    }
}

#[test]
fn builtin_descriptors_are_consistent_with_their_sinks() {
    let mut registry = pasta_core::tool::ToolRegistry::new();
    register_builtin_tools(&mut registry).unwrap();
    let mut ctx = ToolContext::default();
    ctx.knobs.enable(KNOB_MAX_CALLED_KERNEL).unwrap();
    for name in registry.names() {
        let descriptor = registry.descriptor(&name).unwrap();
        let tool = registry.build(&name, &ctx).unwrap();
        assert_eq!(
            tool.make_access_sink().is_some(),
            descriptor.mergeable,
            "{name}: a tool is mergeable exactly when it provides an access sink"
        );
    }
}
