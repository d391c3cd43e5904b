//! JSONL mirror of the unified dialect: one event per line, stable field
//! names, lossless round-trip.

use std::io::{BufRead, Write};

use crate::event::Event;

use super::TraceError;

/// Serialize events as JSON lines.
pub fn to_jsonl(events: &[Event], mut out: impl Write) -> Result<(), TraceError> {
    for event in events {
        let line = serde_json::to_string(event).map_err(|e| TraceError::Parse {
            line: 0,
            detail: e.to_string(),
        })?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parse a JSONL stream back into events. Line numbers are 1-based.
pub fn from_jsonl(input: impl BufRead) -> Result<Vec<Event>, TraceError> {
    read_jsonl_iter(input).collect()
}

/// Lazy JSONL parser; yields one event per non-empty line.
pub fn read_jsonl_iter(input: impl BufRead) -> impl Iterator<Item = Result<Event, TraceError>> {
    input
        .lines()
        .enumerate()
        .filter_map(|(idx, line)| match line {
            Ok(line) if line.trim().is_empty() => None,
            Ok(line) => Some(
                serde_json::from_str(&line).map_err(move |e| TraceError::Parse {
                    line: idx + 1,
                    detail: e.to_string(),
                }),
            ),
            Err(e) => Some(Err(TraceError::Io(e))),
        })
}
