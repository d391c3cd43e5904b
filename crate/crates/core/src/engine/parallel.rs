//! Batched in-situ engine: memory-access events are analyzed in parallel
//! batches right out of the buffer, by `workers` concurrent analyzers holding
//! partitioned tool state. Any non-access event is a serialization point: all
//! in-flight batches are drained and merged into the tool before it is
//! delivered, so launch boundaries, lifecycle events, and framework events
//! reach the tool in stream order with all preceding access state folded in.

use std::sync::RwLock;
use std::time::Instant;

use crossbeam_channel::{bounded, unbounded, TrySendError};

use crate::event::{Event, EventPayload};
use crate::tool::{dispatch_serialized, AccessSink, Tool};
use crate::tools::Report;
use crate::trace::TraceError;

use super::{
    ns_since, preprocess, EngineConfig, EngineError, EngineStats, LiveObjectTable, SlowdownMeter,
};

struct Job {
    events: Vec<Event>,
    sink: Box<dyn AccessSink>,
}

struct BatchResult {
    sink: Box<dyn AccessSink>,
    busy_ns: u64,
    worker: usize,
}

/// Run `tool` over `events` with concurrent batch analyzers.
#[allow(clippy::redundant_closure_call)]
pub fn run_parallel<I>(
    events: I,
    tool: &mut dyn Tool,
    config: &EngineConfig,
) -> Result<(Report, EngineStats), EngineError>
where
    I: IntoIterator<Item = Result<Event, TraceError>>,
    I::IntoIter: Send,
{
    config.validate()?;
    let descriptor = tool.descriptor();
    if !descriptor.mergeable {
        return Err(EngineError::ToolNotMergeable(descriptor.name.to_string()));
    }
    let needs_device_ops = descriptor.needs_device_ops;
    let slowdown = config.analyzer_slowdown_ns;
    let workers = config.workers;
    let start = Instant::now();

    let table = RwLock::new(LiveObjectTable::new());
    let (ev_tx, ev_rx) = bounded::<Result<Event, TraceError>>(config.buffer_capacity);
    let job_slots = (config.buffer_capacity / config.batch_size).max(1);
    let (job_tx, job_rx) = bounded::<Job>(job_slots);
    let (res_tx, res_rx) = unbounded::<BatchResult>();

    let mut stats = EngineStats::default();
    let mut worker_busy = vec![0u64; workers];
    let mut result: Result<Report, EngineError> = Err(EngineError::Config("no events".into()));

    std::thread::scope(|scope| {
        let producer = scope.spawn({
            let source = events.into_iter();
            let ev_tx = ev_tx;
            move || {
                let mut execution_ns = 0u64;
                let mut stalls = 0u64;
                let mut source = source;
                loop {
                    let t = Instant::now();
                    let Some(item) = source.next() else {
                        execution_ns += ns_since(t);
                        break;
                    };
                    match ev_tx.try_send(item) {
                        Ok(()) => {}
                        Err(TrySendError::Full(item)) => {
                            stalls += 1;
                            if ev_tx.send(item).is_err() {
                                break;
                            }
                        }
                        Err(TrySendError::Disconnected(_)) => break,
                    }
                    execution_ns += ns_since(t);
                }
                (execution_ns, stalls)
            }
        });

        for worker in 0..workers {
            scope.spawn({
                let job_rx = job_rx.clone();
                let res_tx = res_tx.clone();
                let table = &table;
                move || {
                    let mut meter = SlowdownMeter::new(slowdown);
                    while let Ok(mut job) = job_rx.recv() {
                        let t = Instant::now();
                        {
                            let table = table.read().expect("table lock");
                            for event in job.events.drain(..) {
                                let rec = preprocess(event, &table);
                                meter.charge();
                                job.sink.on_access(&rec);
                            }
                        }
                        meter.flush();
                        let done = BatchResult {
                            sink: job.sink,
                            busy_ns: ns_since(t),
                            worker,
                        };
                        if res_tx.send(done).is_err() {
                            break;
                        }
                    }
                }
            });
        }
        drop(job_rx);
        drop(res_tx);

        result = {
            let mut coordinate = || -> Result<Report, EngineError> {
                let mut batch: Vec<Event> = Vec::with_capacity(config.batch_size);
                let mut in_flight = 0usize;

                macro_rules! submit {
                    () => {
                        if !batch.is_empty() {
                            let sink = tool
                                .make_access_sink()
                                .expect("mergeable tool must provide an access sink");
                            let job = Job {
                                events: std::mem::take(&mut batch),
                                sink,
                            };
                            // Workers only exit once this side of the channel
                            // closes, so the send cannot fail here.
                            job_tx.send(job).expect("worker pool alive");
                            in_flight += 1;
                        }
                    };
                }

                macro_rules! drain {
                    () => {
                        while in_flight > 0 {
                            let done = res_rx.recv().expect("worker result");
                            worker_busy[done.worker] += done.busy_ns;
                            tool.merge_access_sink(done.sink)
                                .map_err(|source| EngineError::Tool { seq: 0, source })?;
                            in_flight -= 1;
                        }
                    };
                }

                // Timestamps chain across the loop so transfer and analysis tile
                // the coordinator's time without measurement gaps.
                let mut mark = Instant::now();
                loop {
                    let Ok(item) = ev_rx.recv() else {
                        stats.transfer_ns += ns_since(mark);
                        break;
                    };
                    let received = Instant::now();
                    stats.transfer_ns += (received - mark).as_nanos() as u64;
                    let event = item?;
                    let seq = event.seq;

                    if matches!(event.payload, EventPayload::MemAccess(_)) {
                        stats.events_processed += 1;
                        if needs_device_ops {
                            batch.push(event);
                            if batch.len() >= config.batch_size {
                                submit!();
                            }
                        }
                        mark = Instant::now();
                        stats.transfer_ns += (mark - received).as_nanos() as u64;
                        continue;
                    }

                    // Serialization point: flush and drain before the table
                    // mutates or the tool observes the event.
                    submit!();
                    drain!();
                    let drained = Instant::now();
                    stats.transfer_ns += (drained - received).as_nanos() as u64;

                    table.write().expect("table lock").apply(&event);
                    let rec = {
                        let table = table.read().expect("table lock");
                        preprocess(event, &table)
                    };
                    stats.events_processed += 1;
                    dispatch_serialized(tool, &rec)
                        .map_err(|source| EngineError::Tool { seq, source })?;
                    mark = Instant::now();
                    stats.analysis_ns += (mark - drained).as_nanos() as u64;
                }

                submit!();
                drain!();

                let t_finalize = Instant::now();
                stats.transfer_ns += (t_finalize - mark).as_nanos() as u64;
                let report = tool
                    .on_finalize()
                    .map_err(|source| EngineError::Tool { seq: 0, source })?;
                stats.analysis_ns += ns_since(t_finalize);
                Ok(report)
            };
            coordinate()
        };

        // Closing the channels releases the producer and the workers even on
        // an error path, letting the scope join.
        drop(ev_rx);
        drop(job_tx);
        if let Ok((execution_ns, stalls)) = producer.join() {
            stats.execution_ns = execution_ns;
            stats.producer_stalls = stalls;
        }
    });

    stats.collection_ns = worker_busy.iter().copied().max().unwrap_or(0);
    stats.wall_ns = ns_since(start);
    result.map(|report| (report, stats))
}
