//! Event dispatch engines.
//!
//! Both engines feed the same tool callbacks and must produce identical
//! reports. [`run_serial`] models the conventional pipeline: a producer fills
//! a bounded buffer and one analyzer drains it. [`run_parallel`] models
//! in-situ analysis: memory-access events are batched and analyzed by
//! concurrent workers directly where they are buffered, with worker state
//! merged into the tool at serialization points (any non-access event).

mod parallel;
mod preprocess;
mod serial;

pub use parallel::run_parallel;
pub use preprocess::{
    preprocess, DispatchRecord, LiveObjectTable, ObjectRef, Resolution, TensorRef,
};
pub use serial::run_serial;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::tool::ToolError;
use crate::trace::TraceError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineMode {
    Serial,
    Parallel,
}

/// Engine tuning knobs.
#[derive(Clone, Debug)]
pub struct EngineConfig {
    pub mode: EngineMode,
    /// Concurrent analyzers; meaningful in parallel mode only.
    pub workers: usize,
    /// Bounded buffer capacity between the producer and the analyzers, in
    /// events. The producer stalls while it is full.
    pub buffer_capacity: usize,
    /// Events per worker batch in parallel mode.
    pub batch_size: usize,
    /// Artificial per-event busy-wait in the analysis path. Exists for stall
    /// and throughput experiments; zero disables it.
    pub analyzer_slowdown_ns: u64,
}

pub const DEFAULT_BUFFER_CAPACITY: usize = 65_536;
pub const DEFAULT_BATCH_SIZE: usize = 4_096;

impl EngineConfig {
    pub fn serial() -> Self {
        EngineConfig {
            mode: EngineMode::Serial,
            workers: 1,
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
            batch_size: DEFAULT_BATCH_SIZE,
            analyzer_slowdown_ns: 0,
        }
    }

    pub fn parallel(workers: usize) -> Self {
        EngineConfig {
            mode: EngineMode::Parallel,
            workers,
            ..EngineConfig::serial()
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.workers == 0 {
            return Err(EngineError::Config("workers must be >= 1".into()));
        }
        if self.mode == EngineMode::Serial && self.workers != 1 {
            return Err(EngineError::Config(
                "serial mode uses exactly one analyzer".into(),
            ));
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return Err(EngineError::Config(
                "batch_size must be in 1..=buffer_capacity".into(),
            ));
        }
        Ok(())
    }
}

/// Wall-clock accounting of one engine run, split into the four pipeline
/// phases. In serial mode: `execution` is time pulling events from the
/// source, `collection` is time depositing them into the bounded buffer
/// (including stalls), `transfer` is time moving them out of the buffer, and
/// `analysis` is preprocessing plus tool callbacks. In parallel mode the
/// collect-and-analyze work is fused: `collection` reports the busiest
/// worker's total batch-processing time, and the producer's buffer deposits
/// count toward `execution`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct EngineStats {
    pub execution_ns: u64,
    pub collection_ns: u64,
    pub transfer_ns: u64,
    pub analysis_ns: u64,
    pub wall_ns: u64,
    pub producer_stalls: u64,
    pub events_processed: u64,
}

impl EngineStats {
    /// Zero every timing-dependent field, keeping only deterministic counts.
    /// Used for golden-file comparisons.
    pub fn clear_timings(&mut self) {
        self.execution_ns = 0;
        self.collection_ns = 0;
        self.transfer_ns = 0;
        self.analysis_ns = 0;
        self.wall_ns = 0;
        self.producer_stalls = 0;
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid engine config: {0}")]
    Config(String),
    #[error("tool `{0}` is not mergeable and cannot run on the parallel engine")]
    ToolNotMergeable(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("tool failed at seq {seq}: {source}")]
    Tool { seq: u64, source: ToolError },
}

/// Per-kernel map from memory object to access count: the unit of state the
/// parallel engine's workers build and merge.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AccessCountMap {
    pub device: u32,
    pub grid_id: u64,
    counts: BTreeMap<u64, u64>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("count maps are scoped to different kernels: ({0}, {1}) vs ({2}, {3})")]
pub struct ScopeMismatch(u32, u64, u32, u64);

impl AccessCountMap {
    pub fn new(device: u32, grid_id: u64) -> Self {
        AccessCountMap {
            device,
            grid_id,
            counts: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, object_id: u64, count: u64) {
        *self.counts.entry(object_id).or_insert(0) += count;
    }

    pub fn counts(&self) -> &BTreeMap<u64, u64> {
        &self.counts
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Pointwise sum of two count maps covering the same kernel execution.
pub fn merge_count_maps(
    a: &AccessCountMap,
    b: &AccessCountMap,
) -> Result<AccessCountMap, ScopeMismatch> {
    if (a.device, a.grid_id) != (b.device, b.grid_id) {
        return Err(ScopeMismatch(a.device, a.grid_id, b.device, b.grid_id));
    }
    let mut merged = a.clone();
    for (object, count) in &b.counts {
        merged.record(*object, *count);
    }
    Ok(merged)
}

/// Injects the configured per-event analysis latency. Debt is accumulated
/// and paid in millisecond-sized sleeps so the injected time is accurate
/// despite timer slack, and so concurrent analyzers genuinely overlap their
/// waits whatever the host's core count.
pub(crate) struct SlowdownMeter {
    per_event_ns: u64,
    debt_ns: u64,
}

const SLOWDOWN_CHUNK_NS: u64 = 1_000_000;

impl SlowdownMeter {
    pub(crate) fn new(per_event_ns: u64) -> Self {
        SlowdownMeter {
            per_event_ns,
            debt_ns: 0,
        }
    }

    pub(crate) fn charge(&mut self) {
        if self.per_event_ns == 0 {
            return;
        }
        self.debt_ns += self.per_event_ns;
        if self.debt_ns >= SLOWDOWN_CHUNK_NS {
            self.pay();
        }
    }

    pub(crate) fn flush(&mut self) {
        if self.debt_ns > 0 {
            self.pay();
        }
    }

    fn pay(&mut self) {
        std::thread::sleep(std::time::Duration::from_nanos(self.debt_ns));
        self.debt_ns = 0;
    }
}

pub(crate) fn ns_since(start: Instant) -> u64 {
    start.elapsed().as_nanos() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_constraints() {
        assert!(EngineConfig::serial().validate().is_ok());
        assert!(EngineConfig::parallel(4).validate().is_ok());
        let mut bad = EngineConfig::serial();
        bad.workers = 2;
        assert!(bad.validate().is_err());
        let mut bad = EngineConfig::parallel(2);
        bad.batch_size = bad.buffer_capacity + 1;
        assert!(bad.validate().is_err());
        let mut bad = EngineConfig::parallel(0);
        bad.workers = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let mut m = AccessCountMap::new(0, 3);
        m.record(1, 2);
        m.record(7, 5);
        let empty = AccessCountMap::new(0, 3);
        assert_eq!(merge_count_maps(&m, &empty).unwrap(), m);
        assert_eq!(merge_count_maps(&empty, &m).unwrap(), m);
    }

    #[test]
    fn merge_sums_pointwise() {
        let mut a = AccessCountMap::new(0, 0);
        a.record(1, 2);
        let mut b = AccessCountMap::new(0, 0);
        b.record(1, 3);
        b.record(2, 1);
        let merged = merge_count_maps(&a, &b).unwrap();
        assert_eq!(merged.counts()[&1], 5);
        assert_eq!(merged.counts()[&2], 1);
    }

    #[test]
    fn merge_rejects_mismatched_scopes() {
        let a = AccessCountMap::new(0, 0);
        let b = AccessCountMap::new(0, 1);
        assert!(merge_count_maps(&a, &b).is_err());
    }

    #[test]
    fn folding_partitions_equals_unpartitioned_count() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let accesses: Vec<u64> = (0..500).map(|_| rng.gen_range(0..10)).collect();

        let mut whole = AccessCountMap::new(0, 0);
        for object in &accesses {
            whole.record(*object, 1);
        }

        // Split into random partitions, count each, fold the parts.
        let parts: usize = 7;
        let mut maps: Vec<AccessCountMap> = (0..parts).map(|_| AccessCountMap::new(0, 0)).collect();
        for object in &accesses {
            let slot = rng.gen_range(0..parts);
            maps[slot].record(*object, 1);
        }
        let folded = maps
            .into_iter()
            .reduce(|a, b| merge_count_maps(&a, &b).unwrap())
            .unwrap();
        assert_eq!(folded, whole);
    }
}
