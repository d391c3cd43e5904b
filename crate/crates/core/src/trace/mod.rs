//! Trace persistence: a unified binary format, two vendor-style dialects,
//! and a JSONL mirror.
//!
//! Dialect quirks (sign conventions for tensor release, microsecond
//! timestamps, field orders) are normalized at the read boundary; everything
//! downstream sees [`crate::event::Event`] in unified form.

mod binary;
mod jsonl;

pub use binary::{
    read_trace, read_trace_raw, write_trace, write_trace_with, TraceReader, WriteMode,
};
pub use jsonl::{from_jsonl, read_jsonl_iter, to_jsonl};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::Violation;

/// Magic bytes at the start of every binary trace file.
pub const TRACE_MAGIC: [u8; 4] = *b"PSTA";
/// Current format version.
pub const TRACE_VERSION: u32 = 1;
/// Conventional extension for binary traces.
pub const TRACE_EXTENSION: &str = "pasta";

/// Encoding dialect of a binary trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dialect {
    /// Canonical encoding: nanosecond timestamps, action flags, positive sizes.
    Unified,
    /// Vendor-style encoding A: nanosecond timestamps, tensor release carries
    /// an action flag with a positive size, permuted field order.
    Nvx,
    /// Vendor-style encoding B: MICROsecond timestamps, tensor release
    /// encoded as a single signed size (negative = release), permuted field
    /// order.
    Rmx,
}

impl Dialect {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Dialect::Unified => 0,
            Dialect::Nvx => 1,
            Dialect::Rmx => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Dialect::Unified),
            1 => Some(Dialect::Nvx),
            2 => Some(Dialect::Rmx),
            _ => None,
        }
    }
}

impl std::str::FromStr for Dialect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "unified" => Ok(Dialect::Unified),
            "nvx" => Ok(Dialect::Nvx),
            "rmx" => Ok(Dialect::Rmx),
            other => Err(format!("unknown dialect `{other}` (unified|nvx|rmx)")),
        }
    }
}

/// Fixed-layout file header.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceHeader {
    pub version: u32,
    pub dialect: Dialect,
    pub device_count: u32,
    pub epoch_ns: u64,
    /// Number of event records following the stack table; must equal the
    /// actual record count.
    pub event_count: u64,
}

/// Errors raised by trace readers and writers.
#[derive(Debug, Error)]
pub enum TraceError {
    #[error("bad magic: not a trace file")]
    BadMagic,
    #[error("unsupported trace version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown dialect tag {0}")]
    UnknownDialect(u8),
    #[error("unknown event kind tag {0}")]
    UnknownKindTag(u16),
    #[error("truncated record at byte offset {offset}")]
    TruncatedRecord { offset: u64 },
    #[error("stream invariant violated: {0}")]
    InvariantViolation(Violation),
    #[error("event at seq {seq} cannot be represented in this dialect: {detail}")]
    DialectLoss { seq: u64, detail: String },
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
