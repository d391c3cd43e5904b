//! Trace-driven program analysis framework for accelerators.
//!
//! The crate is organized as three layers plus supporting tooling:
//!
//! * [`event`] / [`trace`] — the unified event model and trace formats.
//!   Vendor-style dialects are normalized at the read boundary so analyses
//!   only ever see one event shape.
//! * [`engine`] — preprocessing and dispatch. Two interchangeable engines, a
//!   serial fetch-and-flush pipeline and a batched-parallel in-situ pipeline,
//!   produce identical reports for mergeable tools.
//! * [`tool`] / [`tools`] — the extensibility surface and the built-in tool
//!   collection (kernel frequency, memory characterization, hotness,
//!   timelines, attribution, access profiling).
//! * [`workload`] — a deterministic synthetic DL-workload generator with a
//!   pool-based caching allocator, so every analysis has oracle-checkable
//!   input without real hardware.
//! * [`uvm`] — a demand-paging simulator with pluggable prefetch policies at
//!   object or tensor granularity.

pub mod engine;
pub mod event;
pub mod tool;
pub mod tools;
pub mod trace;
pub mod uvm;
pub mod workload;

pub use event::{validate_stream, Event, EventCategory, EventKind, EventPayload};
