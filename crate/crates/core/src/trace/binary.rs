//! Length-prefixed binary record format.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "PSTA" | version u32 | dialect u8 | device_count u32 | epoch_ns u64 | event_count u64
//! stack_count u32 | stack entries...
//! records: len u32 | body (kind u16, seq u64, device u32, timestamp, stack_ref u32, payload)
//! ```
//!
//! The length prefix covers the record body, so corrupt records can be
//! localized and skipped without decoding them. Call stacks are large and
//! heavily repeated, so they are interned once in a table up front and
//! referenced by index from each record (`u32::MAX` = no stack).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::event::{
    CallStack, CopyDirection, Event, EventKind, EventPayload, Frame, FrameLevel,
    KernelCompleteInfo, KernelLaunchInfo, MemAccessInfo, MemCopyInfo, MemSpace, ObjectAction,
    ObjectEventInfo, OperatorInfo, RangeMarkerInfo, StreamValidator, TensorAction, TensorEventInfo,
};

use super::{Dialect, TraceError, TraceHeader, TRACE_MAGIC, TRACE_VERSION};

const NO_STACK: u32 = u32::MAX;

/// Behavior when an event cannot be represented exactly in the target
/// dialect (e.g. a timestamp that is not a whole microsecond under `Rmx`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WriteMode {
    /// Error with [`TraceError::DialectLoss`].
    #[default]
    Strict,
    /// Truncate to what the dialect can carry.
    Lenient,
}

// ---------------------------------------------------------------------------
// primitive encoding

struct Enc {
    buf: Vec<u8>,
}

impl Enc {
    fn new() -> Self {
        Enc {
            buf: Vec::with_capacity(64),
        }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
    /// File offset of the start of the buffer, for error reporting.
    base_offset: u64,
}

impl<'a> Dec<'a> {
    fn new(buf: &'a [u8], base_offset: u64) -> Self {
        Dec {
            buf,
            pos: 0,
            base_offset,
        }
    }

    fn truncated(&self) -> TraceError {
        TraceError::TruncatedRecord {
            offset: self.base_offset + self.pos as u64,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], TraceError> {
        if self.pos + n > self.buf.len() {
            return Err(self.truncated());
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, TraceError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, TraceError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, TraceError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, TraceError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64, TraceError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String, TraceError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.truncated())
    }
}

// ---------------------------------------------------------------------------
// payload codecs

fn encode_payload(
    enc: &mut Enc,
    event: &Event,
    dialect: Dialect,
    mode: WriteMode,
) -> Result<(), TraceError> {
    match &event.payload {
        EventPayload::None => {}
        EventPayload::KernelLaunch(info) => match dialect {
            Dialect::Unified => {
                enc.str(&info.kernel_name);
                enc.u64(info.grid_id);
                dims(enc, info.grid_dims);
                dims(enc, info.block_dims);
                enc.u32(info.stream);
                ids(enc, &info.arg_objects);
            }
            Dialect::Nvx => {
                enc.u64(info.grid_id);
                enc.str(&info.kernel_name);
                dims(enc, info.grid_dims);
                dims(enc, info.block_dims);
                enc.u32(info.stream);
                ids(enc, &info.arg_objects);
            }
            Dialect::Rmx => {
                enc.u64(info.grid_id);
                enc.u32(info.stream);
                dims(enc, info.block_dims);
                dims(enc, info.grid_dims);
                enc.str(&info.kernel_name);
                ids(enc, &info.arg_objects);
            }
        },
        EventPayload::KernelComplete(info) => enc.u64(info.grid_id),
        EventPayload::MemAccess(info) => {
            let flags = (info.is_write as u8) | ((info.space == MemSpace::Shared) as u8) << 1;
            match dialect {
                Dialect::Unified | Dialect::Nvx => {
                    enc.u64(info.grid_id);
                    enc.u64(info.address);
                    enc.u32(info.size_bytes);
                    enc.u8(flags);
                }
                Dialect::Rmx => {
                    enc.u64(info.address);
                    enc.u64(info.grid_id);
                    enc.u8(flags);
                    enc.u32(info.size_bytes);
                }
            }
        }
        EventPayload::MemCopy(info) => {
            let dir = match info.direction {
                CopyDirection::HostToDevice => 0u8,
                CopyDirection::DeviceToHost => 1,
                CopyDirection::DeviceToDevice => 2,
            };
            match dialect {
                Dialect::Unified | Dialect::Nvx => {
                    enc.u64(info.src_addr);
                    enc.u64(info.dst_addr);
                    enc.u64(info.size_bytes);
                    enc.u8(dir);
                }
                Dialect::Rmx => {
                    enc.u8(dir);
                    enc.u64(info.size_bytes);
                    enc.u64(info.src_addr);
                    enc.u64(info.dst_addr);
                }
            }
        }
        EventPayload::TensorEvent(info) => match dialect {
            Dialect::Unified => {
                enc.u64(info.tensor_id);
                enc.u64(info.object_id);
                enc.u64(info.address);
                enc.u64(info.size_bytes);
                enc.u8(matches!(info.action, TensorAction::Reclaim) as u8);
            }
            Dialect::Nvx => {
                enc.u64(info.object_id);
                enc.u64(info.tensor_id);
                enc.u64(info.address);
                enc.u8(matches!(info.action, TensorAction::Reclaim) as u8);
                enc.u64(info.size_bytes);
            }
            Dialect::Rmx => {
                // Sign carries the action: negative size means release.
                if info.size_bytes > i64::MAX as u64 && mode == WriteMode::Strict {
                    return Err(TraceError::DialectLoss {
                        seq: event.seq,
                        detail: format!("tensor size {} exceeds signed range", info.size_bytes),
                    });
                }
                let magnitude = info.size_bytes.min(i64::MAX as u64) as i64;
                let signed = match info.action {
                    TensorAction::Alloc => magnitude,
                    TensorAction::Reclaim => -magnitude,
                };
                enc.u64(info.object_id);
                enc.u64(info.tensor_id);
                enc.u64(info.address);
                enc.i64(signed);
            }
        },
        EventPayload::ObjectEvent(info) => {
            let action = matches!(info.action, ObjectAction::Free) as u8;
            match dialect {
                Dialect::Unified | Dialect::Nvx => {
                    enc.u64(info.object_id);
                    enc.u64(info.address);
                    enc.u64(info.size_bytes);
                    enc.u8(action);
                }
                Dialect::Rmx => {
                    enc.u64(info.address);
                    enc.u64(info.size_bytes);
                    enc.u64(info.object_id);
                    enc.u8(action);
                }
            }
        }
        EventPayload::Operator(info) => match dialect {
            Dialect::Unified | Dialect::Nvx => {
                enc.u64(info.op_id);
                enc.str(&info.name);
            }
            Dialect::Rmx => {
                enc.str(&info.name);
                enc.u64(info.op_id);
            }
        },
        EventPayload::RangeMarker(info) => {
            enc.u64(info.range_id);
            enc.str(&info.label);
        }
    }
    Ok(())
}

fn decode_payload(
    dec: &mut Dec,
    kind: EventKind,
    dialect: Dialect,
) -> Result<EventPayload, TraceError> {
    use EventKind::*;
    let payload = match kind {
        KernelLaunch => {
            let info = match dialect {
                Dialect::Unified => {
                    let kernel_name = dec.str()?;
                    let grid_id = dec.u64()?;
                    let grid_dims = rdims(dec)?;
                    let block_dims = rdims(dec)?;
                    let stream = dec.u32()?;
                    let arg_objects = rids(dec)?;
                    KernelLaunchInfo {
                        kernel_name,
                        grid_id,
                        grid_dims,
                        block_dims,
                        stream,
                        arg_objects,
                    }
                }
                Dialect::Nvx => {
                    let grid_id = dec.u64()?;
                    let kernel_name = dec.str()?;
                    let grid_dims = rdims(dec)?;
                    let block_dims = rdims(dec)?;
                    let stream = dec.u32()?;
                    let arg_objects = rids(dec)?;
                    KernelLaunchInfo {
                        kernel_name,
                        grid_id,
                        grid_dims,
                        block_dims,
                        stream,
                        arg_objects,
                    }
                }
                Dialect::Rmx => {
                    let grid_id = dec.u64()?;
                    let stream = dec.u32()?;
                    let block_dims = rdims(dec)?;
                    let grid_dims = rdims(dec)?;
                    let kernel_name = dec.str()?;
                    let arg_objects = rids(dec)?;
                    KernelLaunchInfo {
                        kernel_name,
                        grid_id,
                        grid_dims,
                        block_dims,
                        stream,
                        arg_objects,
                    }
                }
            };
            EventPayload::KernelLaunch(info)
        }
        KernelComplete => EventPayload::KernelComplete(KernelCompleteInfo {
            grid_id: dec.u64()?,
        }),
        GlobalAccess | SharedAccess | RemoteSharedAccess => {
            let (grid_id, address, size_bytes, flags) = match dialect {
                Dialect::Unified | Dialect::Nvx => {
                    let grid_id = dec.u64()?;
                    let address = dec.u64()?;
                    let size = dec.u32()?;
                    let flags = dec.u8()?;
                    (grid_id, address, size, flags)
                }
                Dialect::Rmx => {
                    let address = dec.u64()?;
                    let grid_id = dec.u64()?;
                    let flags = dec.u8()?;
                    let size = dec.u32()?;
                    (grid_id, address, size, flags)
                }
            };
            EventPayload::MemAccess(MemAccessInfo {
                grid_id,
                address,
                size_bytes,
                is_write: flags & 1 != 0,
                space: if flags & 2 != 0 {
                    MemSpace::Shared
                } else {
                    MemSpace::Global
                },
            })
        }
        MemCopy | GlobalToSharedCopy => {
            let (src_addr, dst_addr, size_bytes, dir) = match dialect {
                Dialect::Unified | Dialect::Nvx => {
                    let src = dec.u64()?;
                    let dst = dec.u64()?;
                    let size = dec.u64()?;
                    let dir = dec.u8()?;
                    (src, dst, size, dir)
                }
                Dialect::Rmx => {
                    let dir = dec.u8()?;
                    let size = dec.u64()?;
                    let src = dec.u64()?;
                    let dst = dec.u64()?;
                    (src, dst, size, dir)
                }
            };
            let direction = match dir {
                0 => CopyDirection::HostToDevice,
                1 => CopyDirection::DeviceToHost,
                _ => CopyDirection::DeviceToDevice,
            };
            EventPayload::MemCopy(MemCopyInfo {
                src_addr,
                dst_addr,
                size_bytes,
                direction,
            })
        }
        TensorAlloc | TensorReclaim => {
            let info = match dialect {
                Dialect::Unified => {
                    let tensor_id = dec.u64()?;
                    let object_id = dec.u64()?;
                    let address = dec.u64()?;
                    let size_bytes = dec.u64()?;
                    let action = if dec.u8()? != 0 {
                        TensorAction::Reclaim
                    } else {
                        TensorAction::Alloc
                    };
                    TensorEventInfo {
                        tensor_id,
                        object_id,
                        address,
                        size_bytes,
                        action,
                    }
                }
                Dialect::Nvx => {
                    let object_id = dec.u64()?;
                    let tensor_id = dec.u64()?;
                    let address = dec.u64()?;
                    let action = if dec.u8()? != 0 {
                        TensorAction::Reclaim
                    } else {
                        TensorAction::Alloc
                    };
                    let size_bytes = dec.u64()?;
                    TensorEventInfo {
                        tensor_id,
                        object_id,
                        address,
                        size_bytes,
                        action,
                    }
                }
                Dialect::Rmx => {
                    let object_id = dec.u64()?;
                    let tensor_id = dec.u64()?;
                    let address = dec.u64()?;
                    let signed = dec.i64()?;
                    // Normalization: the sign encodes the action, the size is
                    // always positive in unified form.
                    let action = if signed < 0 {
                        TensorAction::Reclaim
                    } else {
                        TensorAction::Alloc
                    };
                    TensorEventInfo {
                        tensor_id,
                        object_id,
                        address,
                        size_bytes: signed.unsigned_abs(),
                        action,
                    }
                }
            };
            EventPayload::TensorEvent(info)
        }
        DeviceMalloc | DeviceFree | DeviceSideMalloc | DeviceSideFree => {
            let (object_id, address, size_bytes, action) = match dialect {
                Dialect::Unified | Dialect::Nvx => {
                    let id = dec.u64()?;
                    let addr = dec.u64()?;
                    let size = dec.u64()?;
                    let action = dec.u8()?;
                    (id, addr, size, action)
                }
                Dialect::Rmx => {
                    let addr = dec.u64()?;
                    let size = dec.u64()?;
                    let id = dec.u64()?;
                    let action = dec.u8()?;
                    (id, addr, size, action)
                }
            };
            EventPayload::ObjectEvent(ObjectEventInfo {
                object_id,
                address,
                size_bytes,
                action: if action != 0 {
                    ObjectAction::Free
                } else {
                    ObjectAction::Malloc
                },
            })
        }
        OperatorStart | OperatorEnd => {
            let info = match dialect {
                Dialect::Unified | Dialect::Nvx => {
                    let op_id = dec.u64()?;
                    let name = dec.str()?;
                    OperatorInfo { op_id, name }
                }
                Dialect::Rmx => {
                    let name = dec.str()?;
                    let op_id = dec.u64()?;
                    OperatorInfo { op_id, name }
                }
            };
            EventPayload::Operator(info)
        }
        RangeStart | RangeEnd => {
            let range_id = dec.u64()?;
            let label = dec.str()?;
            EventPayload::RangeMarker(RangeMarkerInfo { range_id, label })
        }
        _ => EventPayload::None,
    };
    Ok(payload)
}

fn dims(enc: &mut Enc, d: (u32, u32, u32)) {
    enc.u32(d.0);
    enc.u32(d.1);
    enc.u32(d.2);
}

fn rdims(dec: &mut Dec) -> Result<(u32, u32, u32), TraceError> {
    Ok((dec.u32()?, dec.u32()?, dec.u32()?))
}

fn ids(enc: &mut Enc, ids: &[u64]) {
    enc.u32(ids.len() as u32);
    for id in ids {
        enc.u64(*id);
    }
}

fn rids(dec: &mut Dec) -> Result<Vec<u64>, TraceError> {
    let n = dec.u32()? as usize;
    let mut out = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        out.push(dec.u64()?);
    }
    Ok(out)
}

fn encode_stack(enc: &mut Enc, stack: &CallStack) {
    enc.u32(stack.frames.len() as u32);
    for frame in &stack.frames {
        enc.u8(match frame.level {
            FrameLevel::Python => 0,
            FrameLevel::Framework => 1,
            FrameLevel::Native => 2,
        });
        enc.str(&frame.function);
        enc.str(&frame.file);
        enc.u32(frame.line);
    }
}

fn kind_tag(kind: EventKind) -> u16 {
    EventKind::ALL.iter().position(|k| *k == kind).unwrap() as u16
}

fn kind_from_tag(tag: u16) -> Result<EventKind, TraceError> {
    EventKind::ALL
        .get(tag as usize)
        .copied()
        .ok_or(TraceError::UnknownKindTag(tag))
}

// ---------------------------------------------------------------------------
// writer

/// Write `events` to `path` in the given dialect, strict mode.
pub fn write_trace(
    events: &[Event],
    dialect: Dialect,
    path: impl AsRef<Path>,
) -> Result<(), TraceError> {
    write_trace_with(events, dialect, WriteMode::Strict, path)
}

/// Write a trace with explicit handling of dialect-lossy events.
pub fn write_trace_with(
    events: &[Event],
    dialect: Dialect,
    mode: WriteMode,
    path: impl AsRef<Path>,
) -> Result<(), TraceError> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);

    let device_count = events.iter().map(|e| e.device + 1).max().unwrap_or(0);

    out.write_all(&TRACE_MAGIC)?;
    out.write_all(&TRACE_VERSION.to_le_bytes())?;
    out.write_all(&[dialect.tag()])?;
    out.write_all(&device_count.to_le_bytes())?;
    out.write_all(&0u64.to_le_bytes())?; // epoch_ns
    out.write_all(&(events.len() as u64).to_le_bytes())?;

    // Intern stacks in first-appearance order. Identical stacks (the common
    // case: one stack per kernel name) are stored once.
    let mut table: Vec<&CallStack> = Vec::new();
    let mut index: HashMap<Vec<u8>, u32> = HashMap::new();
    for event in events {
        if let Some(stack) = &event.stack {
            let mut enc = Enc::new();
            encode_stack(&mut enc, stack);
            index.entry(enc.buf).or_insert_with(|| {
                table.push(stack);
                (table.len() - 1) as u32
            });
        }
    }
    out.write_all(&(table.len() as u32).to_le_bytes())?;
    for stack in &table {
        let mut enc = Enc::new();
        encode_stack(&mut enc, stack);
        out.write_all(&enc.buf)?;
    }

    for event in events {
        let timestamp = match dialect {
            Dialect::Unified | Dialect::Nvx => event.timestamp_ns,
            Dialect::Rmx => {
                if event.timestamp_ns % 1000 != 0 && mode == WriteMode::Strict {
                    return Err(TraceError::DialectLoss {
                        seq: event.seq,
                        detail: format!(
                            "timestamp {} ns is not a whole microsecond",
                            event.timestamp_ns
                        ),
                    });
                }
                event.timestamp_ns / 1000
            }
        };
        let stack_ref = match &event.stack {
            Some(stack) => {
                let mut enc = Enc::new();
                encode_stack(&mut enc, stack);
                *index.get(&enc.buf).expect("stack interned above")
            }
            None => NO_STACK,
        };

        let mut body = Enc::new();
        body.u16(kind_tag(event.kind));
        body.u64(event.seq);
        body.u32(event.device);
        body.u64(timestamp);
        body.u32(stack_ref);
        encode_payload(&mut body, event, dialect, mode)?;

        out.write_all(&(body.buf.len() as u32).to_le_bytes())?;
        out.write_all(&body.buf)?;
    }
    out.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// reader

/// Streaming trace reader; holds one record in memory at a time (plus the
/// header and interned stack table).
pub struct TraceReader<R: Read> {
    input: R,
    header: TraceHeader,
    stacks: Vec<CallStack>,
    remaining: u64,
    offset: u64,
    validator: Option<StreamValidator>,
    record_buf: Vec<u8>,
}

impl TraceReader<BufReader<File>> {
    /// Open a trace file, validating stream invariants as records are read.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        Self::from_reader(BufReader::new(File::open(path)?), true)
    }

    /// Open a trace file without per-record invariant checking. Used when the
    /// caller wants to collect violations itself rather than fail fast.
    pub fn open_raw(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        Self::from_reader(BufReader::new(File::open(path)?), false)
    }
}

impl<R: Read> TraceReader<R> {
    pub fn from_reader(mut input: R, validate: bool) -> Result<Self, TraceError> {
        let mut offset = 0u64;
        let mut magic = [0u8; 4];
        read_exact_at(&mut input, &mut magic, &mut offset)?;
        if magic != TRACE_MAGIC {
            return Err(TraceError::BadMagic);
        }
        let version = read_u32(&mut input, &mut offset)?;
        if version != TRACE_VERSION {
            return Err(TraceError::UnsupportedVersion(version));
        }
        let mut dialect_tag = [0u8; 1];
        read_exact_at(&mut input, &mut dialect_tag, &mut offset)?;
        let dialect =
            Dialect::from_tag(dialect_tag[0]).ok_or(TraceError::UnknownDialect(dialect_tag[0]))?;
        let device_count = read_u32(&mut input, &mut offset)?;
        let epoch_ns = read_u64(&mut input, &mut offset)?;
        let event_count = read_u64(&mut input, &mut offset)?;

        let stack_count = read_u32(&mut input, &mut offset)?;
        let mut stacks = Vec::with_capacity(stack_count as usize);
        for _ in 0..stack_count {
            // Stack entries are not length-prefixed; decode directly from the
            // stream via a small rolling buffer.
            stacks.push(read_stack(&mut input, &mut offset)?);
        }

        Ok(TraceReader {
            input,
            header: TraceHeader {
                version,
                dialect,
                device_count,
                epoch_ns,
                event_count,
            },
            stacks,
            remaining: event_count,
            offset,
            validator: validate.then(StreamValidator::new),
            record_buf: Vec::new(),
        })
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }

    /// Bytes of the underlying stream decoded so far.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    fn next_event(&mut self) -> Result<Option<Event>, TraceError> {
        if self.remaining == 0 {
            return Ok(None);
        }
        let len = read_u32(&mut self.input, &mut self.offset)? as usize;
        let record_start = self.offset;
        self.record_buf.resize(len, 0);
        read_exact_at(&mut self.input, &mut self.record_buf, &mut self.offset)?;
        self.remaining -= 1;

        let mut dec = Dec::new(&self.record_buf, record_start);
        let kind = kind_from_tag(dec.u16()?)?;
        let seq = dec.u64()?;
        let device = dec.u32()?;
        let raw_timestamp = dec.u64()?;
        let timestamp_ns = match self.header.dialect {
            Dialect::Unified | Dialect::Nvx => raw_timestamp,
            Dialect::Rmx => raw_timestamp.saturating_mul(1000),
        };
        let stack_ref = dec.u32()?;
        let stack = if stack_ref == NO_STACK {
            None
        } else {
            Some(self.stacks.get(stack_ref as usize).cloned().ok_or(
                TraceError::TruncatedRecord {
                    offset: record_start,
                },
            )?)
        };
        let payload = decode_payload(&mut dec, kind, self.header.dialect)?;

        let event = Event {
            seq,
            device,
            timestamp_ns,
            kind,
            payload,
            stack,
        };
        if let Some(validator) = &mut self.validator {
            let mut violations = Vec::new();
            validator.observe(&event, &mut violations);
            if let Some(v) = violations.into_iter().next() {
                return Err(TraceError::InvariantViolation(v));
            }
        }
        Ok(Some(event))
    }
}

impl<R: Read> Iterator for TraceReader<R> {
    type Item = Result<Event, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_event().transpose()
    }
}

fn read_exact_at(
    input: &mut impl Read,
    buf: &mut [u8],
    offset: &mut u64,
) -> Result<(), TraceError> {
    input.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            TraceError::TruncatedRecord { offset: *offset }
        } else {
            TraceError::Io(e)
        }
    })?;
    *offset += buf.len() as u64;
    Ok(())
}

fn read_u32(input: &mut impl Read, offset: &mut u64) -> Result<u32, TraceError> {
    let mut buf = [0u8; 4];
    read_exact_at(input, &mut buf, offset)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(input: &mut impl Read, offset: &mut u64) -> Result<u64, TraceError> {
    let mut buf = [0u8; 8];
    read_exact_at(input, &mut buf, offset)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_str(input: &mut impl Read, offset: &mut u64) -> Result<String, TraceError> {
    let len = read_u32(input, offset)? as usize;
    let mut buf = vec![0u8; len];
    read_exact_at(input, &mut buf, offset)?;
    String::from_utf8(buf).map_err(|_| TraceError::TruncatedRecord { offset: *offset })
}

fn read_stack(input: &mut impl Read, offset: &mut u64) -> Result<CallStack, TraceError> {
    let n = read_u32(input, offset)? as usize;
    let mut frames = Vec::with_capacity(n.min(256));
    for _ in 0..n {
        let mut level = [0u8; 1];
        read_exact_at(input, &mut level, offset)?;
        let level = match level[0] {
            0 => FrameLevel::Python,
            1 => FrameLevel::Framework,
            _ => FrameLevel::Native,
        };
        let function = read_str(input, offset)?;
        let file = read_str(input, offset)?;
        let line = read_u32(input, offset)?;
        frames.push(Frame {
            level,
            function,
            file,
            line,
        });
    }
    Ok(CallStack { frames })
}

/// Open a trace and return its header plus a lazy, validating event stream.
pub fn read_trace(
    path: impl AsRef<Path>,
) -> Result<(TraceHeader, TraceReader<BufReader<File>>), TraceError> {
    let reader = TraceReader::open(path)?;
    Ok((reader.header().clone(), reader))
}

/// Like [`read_trace`] but without per-record invariant checking.
pub fn read_trace_raw(
    path: impl AsRef<Path>,
) -> Result<(TraceHeader, TraceReader<BufReader<File>>), TraceError> {
    let reader = TraceReader::open_raw(path)?;
    Ok((reader.header().clone(), reader))
}
