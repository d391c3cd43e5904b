//! Fetch-and-flush engine: a producer deposits events into a bounded buffer
//! and a single analyzer drains it. The producer stalls whenever the buffer
//! is full, which is exactly the behavior the stats expose.

use std::time::Instant;

use crossbeam_channel::{bounded, TrySendError};

use crate::tool::{dispatch_serialized, Tool};
use crate::tools::Report;
use crate::trace::TraceError;

use super::{
    ns_since, preprocess, EngineConfig, EngineError, EngineStats, LiveObjectTable, SlowdownMeter,
};

struct ProducerStats {
    execution_ns: u64,
    collection_ns: u64,
    stalls: u64,
}

/// Run `tool` over `events` with one analyzer thread (the calling thread).
#[allow(clippy::redundant_closure_call)]
pub fn run_serial<I>(
    events: I,
    tool: &mut dyn Tool,
    config: &EngineConfig,
) -> Result<(Report, EngineStats), EngineError>
where
    I: IntoIterator<Item = Result<Event, TraceError>>,
    I::IntoIter: Send,
{
    config.validate()?;
    let needs_device_ops = tool.descriptor().needs_device_ops;
    let mut slowdown = SlowdownMeter::new(config.analyzer_slowdown_ns);
    let start = Instant::now();

    let (tx, rx) = bounded::<Result<Event, TraceError>>(config.buffer_capacity);
    let source = events.into_iter();

    let mut stats = EngineStats::default();
    let mut table = LiveObjectTable::new();
    let mut result: Result<Report, EngineError> = Err(EngineError::Config("no events".into()));

    std::thread::scope(|scope| {
        let producer = scope.spawn(move || {
            let mut p = ProducerStats {
                execution_ns: 0,
                collection_ns: 0,
                stalls: 0,
            };
            let mut source = source;
            // Timestamps are chained so the two phases tile the loop without
            // per-iteration measurement gaps.
            let mut mark = Instant::now();
            loop {
                let Some(item) = source.next() else {
                    p.execution_ns += ns_since(mark);
                    break;
                };
                let pulled = Instant::now();
                p.execution_ns += (pulled - mark).as_nanos() as u64;
                match tx.try_send(item) {
                    Ok(()) => {}
                    Err(TrySendError::Full(item)) => {
                        p.stalls += 1;
                        if tx.send(item).is_err() {
                            break; // analyzer bailed out
                        }
                    }
                    Err(TrySendError::Disconnected(_)) => break,
                }
                mark = Instant::now();
                p.collection_ns += (mark - pulled).as_nanos() as u64;
            }
            p
        });

        let mut consume = || -> Result<Report, EngineError> {
            let mut mark = Instant::now();
            loop {
                let Ok(item) = rx.recv() else {
                    stats.transfer_ns += ns_since(mark);
                    break;
                };
                let received = Instant::now();
                stats.transfer_ns += (received - mark).as_nanos() as u64;
                let event = item?;
                let seq = event.seq;

                table.apply(&event);
                let rec = preprocess(event, &table);
                stats.events_processed += 1;
                if rec.is_mem_access() {
                    if needs_device_ops {
                        slowdown.charge();
                        tool.on_mem_access(&rec)
                            .map_err(|source| EngineError::Tool { seq, source })?;
                    }
                } else {
                    dispatch_serialized(tool, &rec)
                        .map_err(|source| EngineError::Tool { seq, source })?;
                }
                mark = Instant::now();
                stats.analysis_ns += (mark - received).as_nanos() as u64;
            }
            let t_finalize = Instant::now();
            slowdown.flush();
            let report = tool
                .on_finalize()
                .map_err(|source| EngineError::Tool { seq: 0, source })?;
            stats.analysis_ns += ns_since(t_finalize);
            Ok(report)
        };
        result = consume();
        // On an early exit the receiver is dropped here, which unblocks the
        // producer's send and lets the scope join.
        drop(rx);
        if let Ok(p) = producer.join() {
            stats.execution_ns = p.execution_ns;
            stats.collection_ns = p.collection_ns;
            stats.producer_stalls = p.stalls;
        }
    });

    stats.wall_ns = ns_since(start);
    result.map(|report| (report, stats))
}

use crate::event::Event;
