//! Cross-engine behavior: the parallel engine must reproduce the serial
//! engine's reports exactly, stats must cover the run, and preprocessing
//! must resolve every access of a generated trace.

use pasta_core::engine::{
    preprocess, run_parallel, run_serial, EngineConfig, EngineError, LiveObjectTable, Resolution,
};
use pasta_core::event::{Event, EventPayload, MemSpace};
use pasta_core::tool::{RangeFilter, ToolContext, ToolRegistry};
use pasta_core::tools::{kernel_freq, register_builtin_tools, working_set, Report};
use pasta_core::trace::TraceError;
use pasta_core::workload::{generate_trace, WorkloadSpec};

fn ok_stream(events: &[Event]) -> Vec<Result<Event, TraceError>> {
    events.iter().cloned().map(Ok).collect()
}

fn registry() -> ToolRegistry {
    let mut registry = ToolRegistry::new();
    register_builtin_tools(&mut registry).unwrap();
    registry
}

fn run_both(events: &[Event], tool_name: &str, workers: usize) -> (Report, Report) {
    let registry = registry();
    let ctx = ToolContext::default();
    let mut serial_tool = registry.build(tool_name, &ctx).unwrap();
    let (serial_report, _) = run_serial(
        ok_stream(events),
        serial_tool.as_mut(),
        &EngineConfig::serial(),
    )
    .unwrap();
    let mut parallel_tool = registry.build(tool_name, &ctx).unwrap();
    let (parallel_report, _) = run_parallel(
        ok_stream(events),
        parallel_tool.as_mut(),
        &EngineConfig::parallel(workers),
    )
    .unwrap();
    (serial_report, parallel_report)
}

#[test]
fn parallel_matches_serial_for_mergeable_tools() {
    let mut spec = WorkloadSpec::cnn_toy();
    spec.layers = 2;
    let events = generate_trace(&spec).unwrap();
    for tool in ["kernel-freq", "memchar", "hotness", "uvm-profile"] {
        for workers in [1, 2, 4] {
            let (serial, parallel) = run_both(&events, tool, workers);
            assert_eq!(serial, parallel, "{tool} diverged at {workers} workers");
        }
    }
}

#[test]
fn parallel_refuses_non_mergeable_tools() {
    let registry = registry();
    let ctx = ToolContext::default();
    let mut tool = registry.build("timeline", &ctx).unwrap();
    let err = run_parallel(ok_stream(&[]), tool.as_mut(), &EngineConfig::parallel(2)).unwrap_err();
    assert!(matches!(err, EngineError::ToolNotMergeable(name) if name == "timeline"));
}

#[test]
fn engine_reports_match_standalone_analyses() {
    let events = generate_trace(&WorkloadSpec::cnn_toy()).unwrap();
    let (serial_freq, _) = run_both(&events, "kernel-freq", 2);
    match serial_freq {
        Report::KernelFreq(report) => assert_eq!(report, kernel_freq(&events)),
        other => panic!("unexpected report {other:?}"),
    }
    let (serial_ws, parallel_ws) = run_both(&events, "memchar", 4);
    assert_eq!(serial_ws, parallel_ws);
    match serial_ws {
        Report::MemChar(report) => assert_eq!(report, working_set(&events)),
        other => panic!("unexpected report {other:?}"),
    }
}

#[test]
fn stats_count_every_dispatched_event() {
    let events = generate_trace(&WorkloadSpec::cnn_toy()).unwrap();
    let registry = registry();
    let ctx = ToolContext::default();
    for workers in [0usize, 2, 4] {
        let mut tool = registry.build("memchar", &ctx).unwrap();
        let stats = if workers == 0 {
            run_serial(ok_stream(&events), tool.as_mut(), &EngineConfig::serial())
                .unwrap()
                .1
        } else {
            run_parallel(
                ok_stream(&events),
                tool.as_mut(),
                &EngineConfig::parallel(workers),
            )
            .unwrap()
            .1
        };
        assert_eq!(stats.events_processed, events.len() as u64);
    }
}

#[test]
fn phases_cover_the_wall_clock() {
    // Long enough runs that thread setup/teardown is amortized: the four
    // phases must account for at least 95% of the measured wall time.
    let mut spec = WorkloadSpec::cnn_toy();
    spec.layers = 2;
    let events = generate_trace(&spec).unwrap();
    let registry = registry();
    let ctx = ToolContext::default();

    let mut serial_config = EngineConfig::serial();
    serial_config.analyzer_slowdown_ns = 1_500;
    let mut tool = registry.build("memchar", &ctx).unwrap();
    let (_, stats) = run_serial(ok_stream(&events), tool.as_mut(), &serial_config).unwrap();
    let phase_sum =
        stats.execution_ns + stats.collection_ns + stats.transfer_ns + stats.analysis_ns;
    assert!(
        phase_sum as f64 >= stats.wall_ns as f64 * 0.95,
        "serial phases {phase_sum} do not cover wall {}",
        stats.wall_ns
    );

    let mut parallel_config = EngineConfig::parallel(2);
    parallel_config.analyzer_slowdown_ns = 3_000;
    let mut tool = registry.build("memchar", &ctx).unwrap();
    let (_, stats) = run_parallel(ok_stream(&events), tool.as_mut(), &parallel_config).unwrap();
    let phase_sum =
        stats.execution_ns + stats.collection_ns + stats.transfer_ns + stats.analysis_ns;
    assert!(
        phase_sum as f64 >= stats.wall_ns as f64 * 0.95,
        "parallel phases {phase_sum} do not cover wall {}",
        stats.wall_ns
    );
}

#[test]
fn generated_traces_resolve_every_global_access() {
    for spec in [WorkloadSpec::cnn_toy(), WorkloadSpec::bert_toy()] {
        let events = generate_trace(&spec).unwrap();
        let mut table = LiveObjectTable::new();
        let mut unattributed = 0u64;
        let mut attributed = 0u64;
        for event in events {
            table.apply(&event);
            let is_global = matches!(
                &event.payload,
                EventPayload::MemAccess(info) if info.space == MemSpace::Global
            );
            let rec = preprocess(event, &table);
            if is_global {
                match rec.resolution {
                    Resolution::Object(_) => attributed += 1,
                    Resolution::Unattributed => unattributed += 1,
                    _ => {}
                }
            }
        }
        assert!(attributed > 0);
        assert_eq!(unattributed, 0, "generated accesses must all resolve");
    }
}

#[test]
fn range_filter_composes_with_tools() {
    // Restricting the report of a full run to in-window kernels must equal
    // running the tool on the filtered stream.
    let mut spec = WorkloadSpec::bert_toy();
    spec.layers = 2;
    let events = generate_trace(&spec).unwrap();
    let filter = RangeFilter::with_grid_window(2, 5);
    let filtered = filter.apply(&events);

    // kernel frequency: count launches with grid id in window, per name
    let filtered_freq = kernel_freq(&filtered);
    let mut expected: std::collections::BTreeMap<String, u64> = Default::default();
    for event in &events {
        if let EventPayload::KernelLaunch(info) = &event.payload {
            if (2..=5).contains(&info.grid_id) {
                *expected.entry(info.kernel_name.clone()).or_insert(0) += 1;
            }
        }
    }
    assert_eq!(filtered_freq.counts, expected);

    // memchar: per-kernel footprints of the filtered stream equal the
    // restriction of the full-stream footprints to the window
    let full = working_set(&events);
    let filtered_ws = working_set(&filtered);
    let restricted: Vec<_> = full
        .per_kernel
        .iter()
        .filter(|k| (2..=5).contains(&k.grid_id))
        .cloned()
        .collect();
    assert_eq!(filtered_ws.per_kernel, restricted);
    // lifecycle always passes, so the run-wide footprint is unchanged
    assert_eq!(filtered_ws.footprint_bytes, full.footprint_bytes);
}

#[test]
fn marker_filter_composes_with_kernel_freq() {
    let mut spec = WorkloadSpec::cnn_toy();
    spec.layers = 3;
    let events = generate_trace(&spec).unwrap();
    let filter = RangeFilter::with_labels(["layer_1".to_string()]);
    let filtered = filter.apply(&events);
    let report = kernel_freq(&filtered);

    // layer_1 of the conv toy runs exactly one conv operator: 3 kernels.
    assert_eq!(report.total, 3);
    assert!(report.counts.contains_key("im2col_kernel"));
    assert!(report.counts.contains_key("sgemm_conv"));
    assert!(report.counts.contains_key("bias_relu_kernel"));
}

#[test]
fn source_errors_propagate() {
    let registry = registry();
    let ctx = ToolContext::default();
    let mut tool = registry.build("kernel-freq", &ctx).unwrap();
    let events: Vec<Result<Event, TraceError>> =
        vec![Err(TraceError::TruncatedRecord { offset: 123 })];
    let err = run_serial(events, tool.as_mut(), &EngineConfig::serial()).unwrap_err();
    assert!(matches!(
        err,
        EngineError::Trace(TraceError::TruncatedRecord { offset: 123 })
    ));
}
