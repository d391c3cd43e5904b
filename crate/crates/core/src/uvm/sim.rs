//! Deterministic demand-paging replay.
//!
//! Kernels replay in trace order. Before each kernel its plan entry (if any)
//! is staged page by page at prefetch bandwidth, charged only beyond the
//! previous kernel's execution window when overlap is on. During a kernel,
//! every global access to a non-resident page faults: LRU pages are evicted
//! as needed and the fault pays the fixed latency plus one page at demand
//! migration bandwidth. Kernel base times come from the trace's launch and
//! completion timestamps.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::event::{Event, EventPayload, MemSpace};

use super::plan::{ByteRange, PrefetchPlan};
use super::{SimError, UvmConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PrefetchPolicy {
    None,
    Object,
    Tensor,
}

impl std::fmt::Display for PrefetchPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PrefetchPolicy::None => write!(f, "none"),
            PrefetchPolicy::Object => write!(f, "object"),
            PrefetchPolicy::Tensor => write!(f, "tensor"),
        }
    }
}

/// Per-kernel simulation breakdown.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct KernelSim {
    pub device: u32,
    pub grid_id: u64,
    pub kernel_name: String,
    pub base_ns: u64,
    /// Raw staging time for this kernel's plan entry.
    pub stage_ns: u64,
    /// Staging time actually added to the clock after overlap.
    pub stage_exposed_ns: u64,
    pub fault_ns: u64,
    pub faults: u64,
    pub prefetched_bytes: u64,
    pub demand_bytes: u64,
    pub stage_evictions: u64,
    pub fault_evictions: u64,
}

impl KernelSim {
    pub fn total_ns(&self) -> u64 {
        self.stage_exposed_ns + self.base_ns + self.fault_ns
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimResult {
    pub policy: PrefetchPolicy,
    pub total_time_ns: u64,
    pub faults: u64,
    pub demand_migrated_bytes: u64,
    pub prefetched_bytes: u64,
    pub evictions: u64,
    pub max_resident_pages: u64,
    pub capacity_pages: u64,
    pub per_kernel: Vec<KernelSim>,
}

/// Resident page set with least-recently-used eviction. Stamps are logical,
/// not wall-clock, so replay is deterministic.
struct Residency {
    capacity_pages: usize,
    stamps: HashMap<u64, u64>,
    order: BTreeSet<(u64, u64)>,
    next_stamp: u64,
    max_resident: usize,
}

impl Residency {
    fn new(capacity_pages: usize) -> Self {
        Residency {
            capacity_pages,
            stamps: HashMap::new(),
            order: BTreeSet::new(),
            next_stamp: 0,
            max_resident: 0,
        }
    }

    fn contains(&self, page: u64) -> bool {
        self.stamps.contains_key(&page)
    }

    fn touch(&mut self, page: u64) {
        if let Some(stamp) = self.stamps.get_mut(&page) {
            self.order.remove(&(*stamp, page));
            *stamp = self.next_stamp;
            self.order.insert((self.next_stamp, page));
            self.next_stamp += 1;
        }
    }

    /// Make `page` resident as most-recently-used, evicting as needed.
    /// Returns the number of evictions performed.
    fn admit(&mut self, page: u64) -> u64 {
        if self.contains(page) {
            self.touch(page);
            return 0;
        }
        let mut evictions = 0;
        while self.stamps.len() >= self.capacity_pages {
            let (_, victim) = self.order.pop_first().expect("resident set not empty");
            self.stamps.remove(&victim);
            evictions += 1;
        }
        self.stamps.insert(page, self.next_stamp);
        self.order.insert((self.next_stamp, page));
        self.next_stamp += 1;
        self.max_resident = self.max_resident.max(self.stamps.len());
        debug_assert!(self.stamps.len() <= self.capacity_pages);
        evictions
    }
}

fn pages_of(range: &ByteRange, page_size: u64) -> impl Iterator<Item = u64> {
    let first = range.start / page_size;
    let last = (range.end().saturating_sub(1)) / page_size;
    first..=last
}

/// Bytes of `range` that fall inside `page`.
fn bytes_in_page(range: &ByteRange, page: u64, page_size: u64) -> u64 {
    let page_start = page * page_size;
    let page_end = page_start + page_size;
    range
        .end()
        .min(page_end)
        .saturating_sub(range.start.max(page_start))
}

struct OpenKernel {
    kernel_name: String,
    launch_ts: u64,
    stage_ns: u64,
    stage_exposed_ns: u64,
    fault_ns: u64,
    faults: u64,
    prefetched_bytes: u64,
    demand_bytes: u64,
    stage_evictions: u64,
    fault_evictions: u64,
}

/// Replay a trace under the given config and optional prefetch plan.
pub fn simulate(
    events: &[Event],
    plan: Option<&PrefetchPlan>,
    config: &UvmConfig,
) -> Result<SimResult, SimError> {
    config.validate()?;
    let page_size = config.page_size_bytes;
    let capacity_pages = (config.device_capacity_bytes / page_size) as usize;
    if capacity_pages == 0 {
        return Err(SimError::CapacityTooSmall);
    }

    let policy = match plan {
        None => PrefetchPolicy::None,
        Some(p) => match p.granularity {
            super::PlanGranularity::Object => PrefetchPolicy::Object,
            super::PlanGranularity::Tensor => PrefetchPolicy::Tensor,
        },
    };

    let mut residency = Residency::new(capacity_pages);
    let mut open: BTreeMap<(u32, u64), OpenKernel> = BTreeMap::new();
    let mut launched: BTreeSet<(u32, u64)> = BTreeSet::new();
    let mut prev_exec_ns = 0u64;
    let mut result = SimResult {
        policy,
        total_time_ns: 0,
        faults: 0,
        demand_migrated_bytes: 0,
        prefetched_bytes: 0,
        evictions: 0,
        max_resident_pages: 0,
        capacity_pages: capacity_pages as u64,
        per_kernel: Vec::new(),
    };

    let fault_cost = config.fault_latency_ns
        + (page_size as f64 / config.migration_bw_bytes_per_ns).ceil() as u64;

    for event in events {
        match &event.payload {
            EventPayload::KernelLaunch(info) => {
                let key = (event.device, info.grid_id);
                launched.insert(key);
                let mut kernel = OpenKernel {
                    kernel_name: info.kernel_name.clone(),
                    launch_ts: event.timestamp_ns,
                    stage_ns: 0,
                    stage_exposed_ns: 0,
                    fault_ns: 0,
                    faults: 0,
                    prefetched_bytes: 0,
                    demand_bytes: 0,
                    stage_evictions: 0,
                    fault_evictions: 0,
                };
                if let Some(ranges) = plan.and_then(|p| p.kernels.get(&key)) {
                    for range in ranges {
                        for page in pages_of(range, page_size) {
                            if residency.contains(page) {
                                residency.touch(page);
                            } else {
                                kernel.stage_evictions += residency.admit(page);
                                kernel.prefetched_bytes += bytes_in_page(range, page, page_size);
                            }
                        }
                    }
                    kernel.stage_ns = (kernel.prefetched_bytes as f64
                        / config.prefetch_bw_bytes_per_ns)
                        .ceil() as u64;
                    kernel.stage_exposed_ns = if config.overlap {
                        kernel.stage_ns.saturating_sub(prev_exec_ns)
                    } else {
                        kernel.stage_ns
                    };
                }
                open.insert(key, kernel);
            }
            EventPayload::MemAccess(info) if info.space == MemSpace::Global => {
                let key = (event.device, info.grid_id);
                let Some(kernel) = open.get_mut(&key) else {
                    continue;
                };
                let page = info.address / page_size;
                if residency.contains(page) {
                    residency.touch(page);
                } else {
                    kernel.fault_evictions += residency.admit(page);
                    kernel.faults += 1;
                    kernel.fault_ns += fault_cost;
                    kernel.demand_bytes += page_size;
                }
            }
            EventPayload::KernelComplete(info) => {
                let key = (event.device, info.grid_id);
                let Some(kernel) = open.remove(&key) else {
                    continue;
                };
                let base_ns = event.timestamp_ns.saturating_sub(kernel.launch_ts);
                let sim = KernelSim {
                    device: key.0,
                    grid_id: key.1,
                    kernel_name: kernel.kernel_name,
                    base_ns,
                    stage_ns: kernel.stage_ns,
                    stage_exposed_ns: kernel.stage_exposed_ns,
                    fault_ns: kernel.fault_ns,
                    faults: kernel.faults,
                    prefetched_bytes: kernel.prefetched_bytes,
                    demand_bytes: kernel.demand_bytes,
                    stage_evictions: kernel.stage_evictions,
                    fault_evictions: kernel.fault_evictions,
                };
                prev_exec_ns = base_ns + sim.fault_ns;
                result.total_time_ns += sim.total_ns();
                result.faults += sim.faults;
                result.demand_migrated_bytes += sim.demand_bytes;
                result.prefetched_bytes += sim.prefetched_bytes;
                result.evictions += sim.stage_evictions + sim.fault_evictions;
                result.per_kernel.push(sim);
            }
            _ => {}
        }
    }

    if let Some(plan) = plan {
        for key in plan.kernels.keys() {
            if !launched.contains(key) {
                return Err(SimError::PlanMismatch(format!(
                    "plan entry for device {} grid {} has no matching kernel",
                    key.0, key.1
                )));
            }
        }
    }

    result.max_resident_pages = residency.max_resident as u64;
    Ok(result)
}

/// The three policies run under one config over the same trace, with plans
/// built from the trace itself.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolicyComparison {
    pub none: SimResult,
    pub object: SimResult,
    pub tensor: SimResult,
}

impl PolicyComparison {
    pub fn results(&self) -> [&SimResult; 3] {
        [&self.none, &self.object, &self.tensor]
    }

    /// Execution time normalized to the no-prefetch baseline.
    pub fn normalized(&self, result: &SimResult) -> f64 {
        result.total_time_ns as f64 / self.none.total_time_ns.max(1) as f64
    }
}

/// Run none/object/tensor policies with identical config.
pub fn compare_policies(
    events: &[Event],
    config: &UvmConfig,
) -> Result<PolicyComparison, SimError> {
    use super::plan::build_prefetch_plan;
    use super::PlanGranularity;
    let object_plan = build_prefetch_plan(events, PlanGranularity::Object)?;
    let tensor_plan = build_prefetch_plan(events, PlanGranularity::Tensor)?;
    Ok(PolicyComparison {
        none: simulate(events, None, config)?,
        object: simulate(events, Some(&object_plan), config)?,
        tensor: simulate(events, Some(&tensor_plan), config)?,
    })
}
