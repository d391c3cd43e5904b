//! Acceptance suite: one test per release criterion, each printing a PASS
//! line when it holds. Expected values come from independent recomputation
//! (naive scans, hand simulation) or from pinned orderings, never from the
//! implementation under test.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pasta_core::engine::{run_parallel, run_serial, EngineConfig};
use pasta_core::event::{Event, EventKind, EventPayload, MemSpace};
use pasta_core::tool::{RangeFilter, ToolContext, ToolRegistry};
use pasta_core::tools::{
    hotness, kernel_freq, register_builtin_tools, working_set, MemoryCharacteristics,
};
use pasta_core::trace::{read_trace, read_trace_raw, write_trace, Dialect};
use pasta_core::uvm::{
    build_prefetch_plan, compare_policies, set_capacity, simulate, PlanGranularity, UvmConfig,
    DEFAULT_PAGE_SIZE,
};
use pasta_core::workload::{generate_trace, Mode, Parallelism, ToyModel, WorkloadSpec};

const MIB: u64 = 1024 * 1024;

fn registry() -> ToolRegistry {
    let mut registry = ToolRegistry::new();
    register_builtin_tools(&mut registry).unwrap();
    registry
}

fn ok_stream(events: &[Event]) -> Vec<Result<Event, pasta_core::trace::TraceError>> {
    events.iter().cloned().map(Ok).collect()
}

/// Small randomized workload specs for the equivalence and oracle sweeps.
fn random_spec(rng: &mut ChaCha8Rng) -> WorkloadSpec {
    let model = match rng.gen_range(0..3) {
        0 => ToyModel::CnnToy,
        1 => ToyModel::TransformerEncoderToy,
        _ => ToyModel::TransformerDecoderToy,
    };
    let multi = rng.gen_bool(0.2);
    WorkloadSpec {
        model,
        layers: if multi { 2 } else { rng.gen_range(1..=2) },
        batch: rng.gen_range(1..=3),
        mode: if rng.gen_bool(0.3) {
            Mode::Train
        } else {
            Mode::Inference
        },
        devices: if multi { 2 } else { 1 },
        parallelism: if multi {
            [Parallelism::Dp, Parallelism::Tp, Parallelism::Pp][rng.gen_range(0..3)]
        } else {
            Parallelism::None
        },
        seed: rng.gen(),
        access_sample_rate: rng.gen_range(0.01..0.2),
        untouched_arg_rate: rng.gen_range(0.0..0.5),
    }
}

// ---------------------------------------------------------------------------

#[test]
fn acceptance_01_engine_equivalence() {
    let registry = registry();
    let ctx = ToolContext::default();
    let mergeable = ["kernel-freq", "memchar", "hotness", "uvm-profile"];
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE01);

    let mut compared = 0u32;
    for _ in 0..100 {
        let spec = random_spec(&mut rng);
        let events = generate_trace(&spec).unwrap();
        for tool_name in mergeable {
            let mut serial_tool = registry.build(tool_name, &ctx).unwrap();
            let (serial_report, _) = run_serial(
                ok_stream(&events),
                serial_tool.as_mut(),
                &EngineConfig::serial(),
            )
            .unwrap();
            for workers in [1usize, 2, 4, 8] {
                let mut parallel_tool = registry.build(tool_name, &ctx).unwrap();
                let (parallel_report, _) = run_parallel(
                    ok_stream(&events),
                    parallel_tool.as_mut(),
                    &EngineConfig::parallel(workers),
                )
                .unwrap();
                assert_eq!(
                    serial_report, parallel_report,
                    "{tool_name} diverged with {workers} workers on {spec:?}"
                );
                compared += 1;
            }
        }
    }
    assert_eq!(compared, 100 * 4 * 4);
    println!("ACCEPTANCE 01 engine-equivalence: PASS ({compared} parallel runs matched serial)");
}

/// The trace used by the throughput and phase-breakdown experiments.
fn million_access_trace() -> Vec<Event> {
    let mut spec = WorkloadSpec::bert_toy();
    spec.layers = 10;
    spec.batch = 32;
    spec.access_sample_rate = 0.10;
    spec.seed = 4242;
    let events = generate_trace(&spec).unwrap();
    let accesses = events
        .iter()
        .filter(|e| matches!(e.payload, EventPayload::MemAccess(_)))
        .count();
    assert!(accesses >= 1_000_000, "only {accesses} access events");
    events
}

#[test]
fn acceptance_02_parallel_speedup() {
    let events = million_access_trace();
    let registry = registry();
    let ctx = ToolContext::default();

    let mut serial_cfg = EngineConfig::serial();
    serial_cfg.analyzer_slowdown_ns = 8_000;
    let mut tool = registry.build("memchar", &ctx).unwrap();
    let (serial_report, serial_stats) =
        run_serial(ok_stream(&events), tool.as_mut(), &serial_cfg).unwrap();

    let mut parallel_cfg = EngineConfig::parallel(4);
    parallel_cfg.analyzer_slowdown_ns = 8_000;
    let mut tool = registry.build("memchar", &ctx).unwrap();
    let (parallel_report, parallel_stats) =
        run_parallel(ok_stream(&events), tool.as_mut(), &parallel_cfg).unwrap();

    assert_eq!(serial_report, parallel_report);
    let ratio = parallel_stats.wall_ns as f64 / serial_stats.wall_ns as f64;
    assert!(
        ratio <= 0.5,
        "4-worker wall {:.2}s vs serial {:.2}s: ratio {ratio:.3} > 0.5",
        parallel_stats.wall_ns as f64 / 1e9,
        serial_stats.wall_ns as f64 / 1e9,
    );
    println!("ACCEPTANCE 02 parallel-speedup: PASS (wall ratio {ratio:.3} with 4 workers)");
}

#[test]
fn acceptance_03_phase_breakdown() {
    let events = generate_trace(&WorkloadSpec::bert_toy()).unwrap();
    let registry = registry();
    let ctx = ToolContext::default();

    let mut serial_cfg = EngineConfig::serial();
    serial_cfg.analyzer_slowdown_ns = 2_000;
    let mut tool = registry.build("memchar", &ctx).unwrap();
    let (_, serial_stats) = run_serial(ok_stream(&events), tool.as_mut(), &serial_cfg).unwrap();
    let analysis_share = serial_stats.analysis_ns as f64 / serial_stats.wall_ns as f64;
    assert!(
        analysis_share > 0.6,
        "serial analysis is only {:.1}% of the run",
        analysis_share * 100.0
    );

    let mut parallel_cfg = EngineConfig::parallel(4);
    parallel_cfg.analyzer_slowdown_ns = 2_000;
    let mut tool = registry.build("memchar", &ctx).unwrap();
    let (_, parallel_stats) =
        run_parallel(ok_stream(&events), tool.as_mut(), &parallel_cfg).unwrap();
    // The fused collect-and-analyze phase must take less absolute time than
    // the serial engine spends in analysis alone.
    assert!(
        parallel_stats.collection_ns < serial_stats.analysis_ns,
        "fused phase {:.3}s not below serial analysis {:.3}s",
        parallel_stats.collection_ns as f64 / 1e9,
        serial_stats.analysis_ns as f64 / 1e9,
    );
    println!(
        "ACCEPTANCE 03 phase-breakdown: PASS (serial analysis {:.0}% of run; fused {:.3}s < serial analysis {:.3}s)",
        analysis_share * 100.0,
        parallel_stats.collection_ns as f64 / 1e9,
        serial_stats.analysis_ns as f64 / 1e9,
    );
}

/// Brute-force memory characterization: linear scans, no shared code with
/// the tool under test.
fn brute_force_memchar(events: &[Event]) -> MemoryCharacteristics {
    struct Obj {
        id: u64,
        base: u64,
        size: u64,
        tensors: Vec<(u64, u64, u64)>, // id, addr, size
    }
    let mut live: Vec<(u32, Obj)> = Vec::new();
    let mut live_bytes = 0u64;
    let mut peak = 0u64;
    let mut launches: Vec<(u32, u64, String)> = Vec::new();
    let mut touched: BTreeMap<(u32, u64), (BTreeMap<u64, u64>, BTreeMap<u64, u64>)> =
        BTreeMap::new();

    for event in events {
        match &event.payload {
            EventPayload::ObjectEvent(info) => match info.action {
                pasta_core::event::ObjectAction::Malloc => {
                    live.push((
                        event.device,
                        Obj {
                            id: info.object_id,
                            base: info.address,
                            size: info.size_bytes,
                            tensors: vec![],
                        },
                    ));
                    live_bytes += info.size_bytes;
                    peak = peak.max(live_bytes);
                }
                pasta_core::event::ObjectAction::Free => {
                    if let Some(pos) = live
                        .iter()
                        .position(|(d, o)| *d == event.device && o.id == info.object_id)
                    {
                        live_bytes -= live[pos].1.size;
                        live.remove(pos);
                    }
                }
            },
            EventPayload::TensorEvent(info) => {
                if let Some((_, obj)) = live
                    .iter_mut()
                    .find(|(d, o)| *d == event.device && o.id == info.object_id)
                {
                    match info.action {
                        pasta_core::event::TensorAction::Alloc => {
                            obj.tensors
                                .push((info.tensor_id, info.address, info.size_bytes))
                        }
                        pasta_core::event::TensorAction::Reclaim => {
                            obj.tensors.retain(|(id, ..)| *id != info.tensor_id)
                        }
                    }
                }
            }
            EventPayload::KernelLaunch(info) => {
                launches.push((event.device, info.grid_id, info.kernel_name.clone()));
            }
            EventPayload::MemAccess(info) if info.space == MemSpace::Global => {
                for (d, obj) in &live {
                    if *d == event.device
                        && info.address >= obj.base
                        && info.address + u64::from(info.size_bytes) <= obj.base + obj.size
                    {
                        let entry = touched.entry((event.device, info.grid_id)).or_default();
                        entry.0.insert(obj.id, obj.size);
                        for (tid, taddr, tsize) in &obj.tensors {
                            if info.address >= *taddr
                                && info.address + u64::from(info.size_bytes) <= taddr + tsize
                            {
                                entry.1.insert(*tid, *tsize);
                            }
                        }
                        break;
                    }
                }
            }
            _ => {}
        }
    }

    launches.sort();
    let per_kernel: Vec<pasta_core::tools::KernelFootprint> = launches
        .iter()
        .map(|(device, grid_id, name)| {
            let (objects, tensors) = touched
                .get(&(*device, *grid_id))
                .cloned()
                .unwrap_or_default();
            pasta_core::tools::KernelFootprint {
                device: *device,
                grid_id: *grid_id,
                kernel_name: name.clone(),
                object_bytes: objects.values().sum(),
                tensor_bytes: tensors.values().sum(),
            }
        })
        .collect();

    let mut footprints: Vec<u64> = per_kernel.iter().map(|k| k.object_bytes).collect();
    footprints.sort_unstable();
    let n = footprints.len();
    let (min_bytes, avg, median, p90) = if n == 0 {
        (0, 0.0, 0.0, 0)
    } else {
        let sum: u64 = footprints.iter().sum();
        let median = if n % 2 == 1 {
            footprints[n / 2] as f64
        } else {
            (footprints[n / 2 - 1] + footprints[n / 2]) as f64 / 2.0
        };
        let rank = ((0.9 * n as f64).ceil() as usize).max(1);
        (
            footprints[0],
            sum as f64 / n as f64,
            median,
            footprints[rank - 1],
        )
    };

    MemoryCharacteristics {
        kernel_count: n as u64,
        footprint_bytes: peak,
        ws_bytes: footprints.last().copied().unwrap_or(0),
        ws_tensor_bytes: per_kernel.iter().map(|k| k.tensor_bytes).max().unwrap_or(0),
        per_kernel,
        min_bytes,
        avg_bytes: avg,
        median_bytes: median,
        p90_bytes: p90,
    }
}

#[test]
fn acceptance_04_working_set_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE04);
    for round in 0..50 {
        let spec = random_spec(&mut rng);
        let events = generate_trace(&spec).unwrap();
        let got = working_set(&events);
        let expected = brute_force_memchar(&events);
        assert_eq!(
            got, expected,
            "round {round}: memchar diverged from brute force on {spec:?}"
        );
        assert!(
            got.ws_bytes <= got.footprint_bytes,
            "round {round}: ws exceeds footprint"
        );
    }
    println!("ACCEPTANCE 04 working-set-correctness: PASS (50 traces, exact match)");
}

#[test]
fn acceptance_05_footprint_ws_gap() {
    let bert = working_set(&generate_trace(&WorkloadSpec::bert_toy()).unwrap());
    let gpt2 = working_set(&generate_trace(&WorkloadSpec::gpt2_toy()).unwrap());
    let bert_ratio = bert.footprint_bytes as f64 / bert.ws_bytes as f64;
    let gpt2_ratio = gpt2.footprint_bytes as f64 / gpt2.ws_bytes as f64;
    assert!(
        bert_ratio >= 2.0,
        "bert-toy footprint/ws = {bert_ratio:.2} < 2.0"
    );
    assert!(
        gpt2_ratio >= 2.0,
        "gpt2-toy footprint/ws = {gpt2_ratio:.2} < 2.0"
    );
    assert!(
        gpt2_ratio > bert_ratio,
        "gpt2-toy ratio {gpt2_ratio:.2} does not exceed bert-toy ratio {bert_ratio:.2}"
    );
    println!("ACCEPTANCE 05 footprint-ws-gap: PASS (bert {bert_ratio:.2}x, gpt2 {gpt2_ratio:.2}x)");
}

#[test]
fn acceptance_06_uvm_orderings() {
    // (a) no oversubscription: both prefetch policies beat demand paging by
    // at least 5%, and object-level is never behind tensor-level.
    for (name, spec) in [
        ("cnn-toy", WorkloadSpec::cnn_toy()),
        ("bert-toy", WorkloadSpec::bert_toy()),
        ("gpt2-toy", WorkloadSpec::gpt2_toy()),
    ] {
        let events = generate_trace(&spec).unwrap();
        let footprint = working_set(&events).footprint_bytes;
        let capacity = set_capacity(footprint, 1.0, DEFAULT_PAGE_SIZE).unwrap();
        let cmp = compare_policies(&events, &UvmConfig::with_capacity(capacity)).unwrap();
        let (none, obj, ten) = (
            cmp.none.total_time_ns,
            cmp.object.total_time_ns,
            cmp.tensor.total_time_ns,
        );
        assert!(
            obj <= ten,
            "{name}: object {obj} behind tensor {ten} at factor 1"
        );
        assert!(
            ten <= none,
            "{name}: tensor {ten} behind baseline {none} at factor 1"
        );
        assert!(
            (ten as f64) <= 0.95 * none as f64,
            "{name}: tensor prefetch less than 5% ahead of baseline"
        );
    }

    // (b) factor-3 oversubscription on the high-working-set workload:
    // object-level prefetch thrashes past the baseline while tensor-level
    // stays clearly ahead of object-level.
    let events = generate_trace(&WorkloadSpec::high_ws_toy()).unwrap();
    let footprint = working_set(&events).footprint_bytes;
    let capacity = set_capacity(footprint, 3.0, DEFAULT_PAGE_SIZE).unwrap();
    let cmp = compare_policies(&events, &UvmConfig::with_capacity(capacity)).unwrap();
    assert!(
        (cmp.tensor.total_time_ns as f64) <= 0.95 * cmp.object.total_time_ns as f64,
        "high-ws factor 3: tensor {} not 5% ahead of object {}",
        cmp.tensor.total_time_ns,
        cmp.object.total_time_ns
    );
    assert!(
        (cmp.object.total_time_ns as f64) >= 1.05 * cmp.none.total_time_ns as f64,
        "high-ws factor 3: object {} not 5% behind baseline {}",
        cmp.object.total_time_ns,
        cmp.none.total_time_ns
    );

    // (c) factor-3 oversubscription on the small-relative-working-set
    // workload: object-level prefetch still does not lose to the baseline.
    let events = generate_trace(&WorkloadSpec::gpt2_toy()).unwrap();
    let footprint = working_set(&events).footprint_bytes;
    let capacity = set_capacity(footprint, 3.0, DEFAULT_PAGE_SIZE).unwrap();
    let cmp = compare_policies(&events, &UvmConfig::with_capacity(capacity)).unwrap();
    assert!(
        cmp.object.total_time_ns <= cmp.none.total_time_ns,
        "gpt2-toy factor 3: object {} behind baseline {}",
        cmp.object.total_time_ns,
        cmp.none.total_time_ns
    );
    println!(
        "ACCEPTANCE 06 uvm-orderings: PASS (factor-1 ordering, factor-3 inversion, gpt2 exception)"
    );
}

#[test]
fn acceptance_07_simulator_invariants() {
    // Residency never exceeds capacity across randomized configs.
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE07);
    for round in 0..20 {
        let mut spec = random_spec(&mut rng);
        spec.devices = 1;
        spec.parallelism = Parallelism::None;
        let events = generate_trace(&spec).unwrap();
        let capacity_pages = rng.gen_range(1..=8u64);
        let config = UvmConfig::with_capacity(capacity_pages * DEFAULT_PAGE_SIZE);
        let policy = rng.gen_range(0..3);
        let plan = match policy {
            0 => None,
            1 => build_prefetch_plan(&events, PlanGranularity::Object).ok(),
            _ => build_prefetch_plan(&events, PlanGranularity::Tensor).ok(),
        };
        let result = simulate(&events, plan.as_ref(), &config).unwrap();
        assert!(
            result.max_resident_pages <= capacity_pages,
            "round {round}: residency {} exceeded capacity {capacity_pages}",
            result.max_resident_pages
        );
    }

    // Prefetch monotonicity: with capacity above the footprint (no
    // evictions), staging supersets can only remove faults.
    for seed in [1u64, 2, 3] {
        let mut spec = WorkloadSpec::cnn_toy();
        spec.layers = 2;
        spec.seed = seed;
        let events = generate_trace(&spec).unwrap();
        let object = build_prefetch_plan(&events, PlanGranularity::Object).unwrap();
        let tensor = build_prefetch_plan(&events, PlanGranularity::Tensor).unwrap();
        let config = UvmConfig::with_capacity(1 << 30);
        let none = simulate(&events, None, &config).unwrap();
        let with_tensor = simulate(&events, Some(&tensor), &config).unwrap();
        let with_object = simulate(&events, Some(&object), &config).unwrap();
        for ((n, t), o) in none
            .per_kernel
            .iter()
            .zip(&with_tensor.per_kernel)
            .zip(&with_object.per_kernel)
        {
            assert!(o.faults <= t.faults && t.faults <= n.faults);
        }
    }

    // Eviction monotonicity: enlarging one kernel's plan entry (runs
    // identical up to that kernel) never reduces its staging evictions.
    for seed in [1u64, 2, 3] {
        let mut spec = WorkloadSpec::cnn_toy();
        spec.layers = 2;
        spec.seed = seed;
        let events = generate_trace(&spec).unwrap();
        let object = build_prefetch_plan(&events, PlanGranularity::Object).unwrap();
        let tensor = build_prefetch_plan(&events, PlanGranularity::Tensor).unwrap();
        let config = UvmConfig::with_capacity(4 * DEFAULT_PAGE_SIZE);
        for key in tensor.kernels.keys().copied().collect::<Vec<_>>() {
            let mut hybrid = tensor.clone();
            hybrid.kernels.insert(key, object.kernels[&key].clone());
            let small = simulate(&events, Some(&tensor), &config).unwrap();
            let big = simulate(&events, Some(&hybrid), &config).unwrap();
            let evictions = |r: &pasta_core::uvm::SimResult| {
                r.per_kernel
                    .iter()
                    .find(|k| (k.device, k.grid_id) == key)
                    .map(|k| k.stage_evictions)
                    .unwrap_or(0)
            };
            assert!(
                evictions(&big) >= evictions(&small),
                "eviction monotonicity at {key:?}"
            );
        }
    }

    // Hand-simulated thrash: capacity one page, two kernels alternating
    // between two pages.
    let mut events = Vec::new();
    let mut seq = 0u64;
    let mut ts = 0u64;
    let base = 0x40000000u64;
    let mut push = |kind: EventKind, payload: EventPayload, ts: u64| {
        events.push(Event {
            seq,
            device: 0,
            timestamp_ns: ts,
            kind,
            payload,
            stack: None,
        });
        seq += 1;
    };
    push(
        EventKind::DeviceMalloc,
        EventPayload::ObjectEvent(pasta_core::event::ObjectEventInfo {
            object_id: 1,
            address: base,
            size_bytes: 4 * MIB,
            action: pasta_core::event::ObjectAction::Malloc,
        }),
        ts,
    );
    for grid_id in 0..2u64 {
        push(
            EventKind::KernelLaunch,
            EventPayload::KernelLaunch(pasta_core::event::KernelLaunchInfo {
                kernel_name: format!("k{grid_id}"),
                grid_id,
                grid_dims: (1, 1, 1),
                block_dims: (32, 1, 1),
                stream: 0,
                arg_objects: vec![1],
            }),
            ts,
        );
        for page in 0..2u64 {
            push(
                EventKind::GlobalAccess,
                EventPayload::MemAccess(pasta_core::event::MemAccessInfo {
                    grid_id,
                    address: base + page * 2 * MIB,
                    size_bytes: 32,
                    is_write: false,
                    space: MemSpace::Global,
                }),
                ts,
            );
        }
        ts += 100_000;
        push(
            EventKind::KernelComplete,
            EventPayload::KernelComplete(pasta_core::event::KernelCompleteInfo { grid_id }),
            ts,
        );
    }
    let config = UvmConfig::with_capacity(2 * MIB);
    let result = simulate(&events, None, &config).unwrap();
    // Hand computation: 4 faults (every access misses), 3 evictions (all but
    // the first admit), each fault pays 20_000 ns latency + 2 MiB at 8 B/ns.
    let fault_cost = 20_000 + 2 * MIB / 8;
    assert_eq!(result.faults, 4);
    assert_eq!(result.evictions, 3);
    assert_eq!(result.total_time_ns, 2 * 100_000 + 4 * fault_cost);
    assert_eq!(result.demand_migrated_bytes, 8 * MIB);

    println!("ACCEPTANCE 07 simulator-invariants: PASS (residency, monotonicity, hand-check)");
}

#[test]
fn acceptance_08_multi_gpu_semantics() {
    use pasta_core::tools::memory_timeline;

    let mut dp = WorkloadSpec::bert_toy();
    dp.devices = 2;
    dp.parallelism = Parallelism::Dp;
    dp.mode = Mode::Train;
    let dp_timeline = memory_timeline(&generate_trace(&dp).unwrap(), Some((0, 1))).unwrap();
    assert!(
        dp_timeline.diff.iter().all(|p| p.delta_bytes == 0),
        "data-parallel devices must have identical usage"
    );

    let mut tp = dp.clone();
    tp.parallelism = Parallelism::Tp;
    let tp_timeline = memory_timeline(&generate_trace(&tp).unwrap(), Some((0, 1))).unwrap();
    let ratio = tp_timeline.peak(0) as f64 / dp_timeline.peak(0) as f64;
    assert!(
        (0.45..=0.55).contains(&ratio),
        "tensor-parallel per-device peak is {ratio:.3} of data-parallel, outside 0.5 +/- 10%"
    );

    let mut pp = dp.clone();
    pp.parallelism = Parallelism::Pp;
    let pp_timeline = memory_timeline(&generate_trace(&pp).unwrap(), Some((0, 1))).unwrap();
    assert!(
        pp_timeline.diff.iter().any(|p| p.delta_bytes != 0),
        "pipeline-parallel devices must differ"
    );
    println!(
        "ACCEPTANCE 08 multi-gpu-semantics: PASS (dp diff 0, tp ratio {ratio:.3}, pp asymmetric)"
    );
}

#[test]
fn acceptance_09_dialect_normalization() {
    let mut spec = WorkloadSpec::bert_toy();
    spec.layers = 2;
    let events = generate_trace(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let mut normalized = Vec::new();
    for dialect in [Dialect::Nvx, Dialect::Rmx] {
        let path = dir.path().join(format!("{dialect:?}.pasta"));
        write_trace(&events, dialect, &path).unwrap();
        let (_, reader) = read_trace(&path).unwrap();
        normalized.push(reader.map(|r| r.unwrap()).collect::<Vec<Event>>());
    }
    assert_eq!(
        normalized[0], normalized[1],
        "nvx and rmx must normalize identically"
    );
    assert_eq!(
        normalized[0], events,
        "normalization must reproduce the unified stream"
    );

    // Sign fixture: a release of 4096 bytes at 5 us, encoded per dialect.
    let release = Event {
        seq: 0,
        device: 0,
        timestamp_ns: 5_000,
        kind: EventKind::TensorReclaim,
        payload: EventPayload::TensorEvent(pasta_core::event::TensorEventInfo {
            tensor_id: 1,
            object_id: 1,
            address: 0x1000,
            size_bytes: 4096,
            action: pasta_core::event::TensorAction::Reclaim,
        }),
        stack: None,
    };
    for dialect in [Dialect::Nvx, Dialect::Rmx] {
        let path = dir.path().join("fixture.pasta");
        write_trace(std::slice::from_ref(&release), dialect, &path).unwrap();
        if dialect == Dialect::Rmx {
            let bytes = std::fs::read(&path).unwrap();
            assert!(
                bytes.windows(8).any(|w| w == (-4096i64).to_le_bytes()),
                "rmx must encode the release with a negative size"
            );
        }
        let (_, reader) = read_trace_raw(&path).unwrap();
        let back: Vec<Event> = reader.map(|r| r.unwrap()).collect();
        assert_eq!(back[0], release, "{dialect:?} fixture mismatch");
    }
    println!("ACCEPTANCE 09 dialect-normalization: PASS");
}

#[test]
fn acceptance_10_range_filtering() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE10);
    for round in 0..20 {
        let mut spec = random_spec(&mut rng);
        spec.devices = 1;
        spec.parallelism = Parallelism::None;
        spec.layers = 2;
        let events = generate_trace(&spec).unwrap();
        let max_grid = events.iter().filter_map(|e| e.grid_id()).max().unwrap_or(0);
        let start = rng.gen_range(0..=max_grid);
        let end = rng.gen_range(start..=max_grid);
        let window = RangeFilter::with_grid_window(start, end);
        let in_window = |grid: u64| grid >= start && grid <= end;

        // kernel-freq equivalence
        let filtered_freq = kernel_freq(&window.apply(&events));
        let mut expected: BTreeMap<String, u64> = BTreeMap::new();
        for event in &events {
            if let EventPayload::KernelLaunch(info) = &event.payload {
                if in_window(info.grid_id) {
                    *expected.entry(info.kernel_name.clone()).or_insert(0) += 1;
                }
            }
        }
        assert_eq!(
            filtered_freq.counts, expected,
            "round {round}: kernel-freq window mismatch"
        );

        // memchar equivalence: filtered per-kernel footprints are the
        // restriction of the full report
        let full = working_set(&events);
        let filtered = working_set(&window.apply(&events));
        let restricted: Vec<_> = full
            .per_kernel
            .iter()
            .filter(|k| in_window(k.grid_id))
            .cloned()
            .collect();
        assert_eq!(
            filtered.per_kernel, restricted,
            "round {round}: memchar window mismatch"
        );
        assert_eq!(filtered.footprint_bytes, full.footprint_bytes);
        assert_eq!(
            filtered.ws_bytes,
            restricted.iter().map(|k| k.object_bytes).max().unwrap_or(0)
        );

        // marker-label equivalence: pick one layer label and compute the
        // enclosed grid set independently
        let label = format!("layer_{}", rng.gen_range(0..spec.layers));
        let marker = RangeFilter::with_labels([label.clone()]);
        let mut enclosed: BTreeSet<u64> = BTreeSet::new();
        let mut depth = 0u32;
        for event in &events {
            match (&event.kind, &event.payload) {
                (EventKind::RangeStart, EventPayload::RangeMarker(info)) if info.label == label => {
                    depth += 1
                }
                (EventKind::RangeEnd, EventPayload::RangeMarker(info)) if info.label == label => {
                    depth -= 1
                }
                (EventKind::KernelLaunch, EventPayload::KernelLaunch(info)) if depth > 0 => {
                    enclosed.insert(info.grid_id);
                }
                _ => {}
            }
        }
        let marker_freq = kernel_freq(&marker.apply(&events));
        let mut expected: BTreeMap<String, u64> = BTreeMap::new();
        for event in &events {
            if let EventPayload::KernelLaunch(info) = &event.payload {
                if enclosed.contains(&info.grid_id) {
                    *expected.entry(info.kernel_name.clone()).or_insert(0) += 1;
                }
            }
        }
        assert_eq!(
            marker_freq.counts, expected,
            "round {round}: marker filter mismatch"
        );

        let marker_ws = working_set(&marker.apply(&events));
        let restricted: Vec<_> = full
            .per_kernel
            .iter()
            .filter(|k| enclosed.contains(&k.grid_id))
            .cloned()
            .collect();
        assert_eq!(
            marker_ws.per_kernel, restricted,
            "round {round}: memchar marker mismatch"
        );
    }
    println!("ACCEPTANCE 10 range-filtering: PASS (20 traces, windows and labels)");
}

#[test]
fn acceptance_11_hotness_semantics() {
    // Conservation on a generated trace.
    let events = generate_trace(&WorkloadSpec::cnn_toy()).unwrap();
    let matrix = hotness(&events, 1_000_000);
    let global_accesses = events
        .iter()
        .filter(|e| {
            matches!(&e.payload, EventPayload::MemAccess(info) if info.space == MemSpace::Global)
        })
        .count() as u64;
    assert_eq!(matrix.sum(), global_accesses);
    assert_eq!(matrix.total_accesses, global_accesses);

    // Constructed persistent vs transient pattern.
    let window = 1_000u64;
    let persistent = 0u64;
    let transient = 8 * 2 * MIB;
    let mut events = Vec::new();
    events.push(Event {
        seq: 0,
        device: 0,
        timestamp_ns: 0,
        kind: EventKind::KernelLaunch,
        payload: EventPayload::KernelLaunch(pasta_core::event::KernelLaunchInfo {
            kernel_name: "k".into(),
            grid_id: 0,
            grid_dims: (1, 1, 1),
            block_dims: (32, 1, 1),
            stream: 0,
            arg_objects: vec![],
        }),
        stack: None,
    });
    let mut seq = 1;
    for w in 0..10u64 {
        let mut access = |address: u64, at: u64| {
            events.push(Event {
                seq,
                device: 0,
                timestamp_ns: at,
                kind: EventKind::GlobalAccess,
                payload: EventPayload::MemAccess(pasta_core::event::MemAccessInfo {
                    grid_id: 0,
                    address,
                    size_bytes: 32,
                    is_write: false,
                    space: MemSpace::Global,
                }),
                stack: None,
            });
            seq += 1;
        };
        access(persistent, w * window + 1);
        if (4..=6).contains(&w) {
            access(transient, w * window + 2);
        }
    }
    let matrix = hotness(&events, window);
    let persistent_row = matrix.row_for_address(persistent).unwrap();
    let transient_row = matrix.row_for_address(transient).unwrap();
    assert!(
        persistent_row.iter().all(|c| *c > 0),
        "persistent row has gaps: {persistent_row:?}"
    );
    for (w, count) in transient_row.iter().enumerate() {
        assert_eq!(
            *count > 0,
            (4..=6).contains(&(w as u64)),
            "transient row wrong at window {w}: {transient_row:?}"
        );
    }
    assert_eq!(matrix.sum(), 13);
    println!("ACCEPTANCE 11 hotness-semantics: PASS (conservation and burst pattern)");
}
