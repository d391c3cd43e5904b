//! Demand-paging simulation for unified-memory workloads, with pluggable
//! prefetch policies built from access profiles at object or tensor
//! granularity.

mod plan;
mod sim;

pub use plan::{build_prefetch_plan, set_capacity, ByteRange, PlanGranularity, PrefetchPlan};
pub use sim::{compare_policies, simulate, KernelSim, PolicyComparison, PrefetchPolicy, SimResult};

use serde::Serialize;
use thiserror::Error;

/// Default paging granularity: 2 MiB, the large-page migration unit. Matches
/// the hotness block size and the allocator's chunk granule, so object, page,
/// and block arithmetic line up exactly.
pub const DEFAULT_PAGE_SIZE: u64 = 2 * 1024 * 1024;

/// Cost model and capacity for one simulation run.
#[derive(Clone, Debug, Serialize)]
pub struct UvmConfig {
    pub device_capacity_bytes: u64,
    pub page_size_bytes: u64,
    /// Charged per fault, on top of the migration itself.
    pub fault_latency_ns: u64,
    /// On-demand migration bandwidth.
    pub migration_bw_bytes_per_ns: f64,
    /// Bulk staging bandwidth used by prefetch.
    pub prefetch_bw_bytes_per_ns: f64,
    /// Overlap prefetch for kernel k with kernel k-1's execution; only the
    /// residual beyond that window is charged.
    pub overlap: bool,
}

impl UvmConfig {
    pub fn with_capacity(device_capacity_bytes: u64) -> Self {
        UvmConfig {
            device_capacity_bytes,
            page_size_bytes: DEFAULT_PAGE_SIZE,
            fault_latency_ns: 20_000,
            migration_bw_bytes_per_ns: 8.0,
            prefetch_bw_bytes_per_ns: 16.0,
            overlap: true,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.page_size_bytes == 0 || self.device_capacity_bytes < self.page_size_bytes {
            return Err(SimError::CapacityTooSmall);
        }
        if self.migration_bw_bytes_per_ns <= 0.0 || self.prefetch_bw_bytes_per_ns <= 0.0 {
            return Err(SimError::BadConfig("bandwidths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("device capacity is smaller than one page")]
    CapacityTooSmall,
    #[error("oversubscription factor must be >= 1")]
    BadOversubFactor,
    #[error("profile contains no device-side accesses")]
    EmptyProfile,
    #[error("prefetch plan does not match the trace: {0}")]
    PlanMismatch(String),
    #[error("invalid simulator config: {0}")]
    BadConfig(String),
}
