//! Event preprocessing: resolving memory accesses against the live object
//! table and extracting per-kind metadata into dispatch records.

use std::collections::{BTreeMap, HashMap};

use crate::event::{Event, EventPayload, MemSpace, ObjectAction, TensorAction};

/// A preprocessed event as delivered to tools.
#[derive(Clone, Debug, PartialEq)]
pub struct DispatchRecord {
    pub event: Event,
    pub resolution: Resolution,
}

impl DispatchRecord {
    pub fn is_mem_access(&self) -> bool {
        matches!(self.event.payload, EventPayload::MemAccess(_))
    }
}

/// Where a memory access landed. Unresolvable accesses are tagged, not
/// dropped; tools decide what to do with them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resolution {
    /// Not a memory access.
    NotApplicable,
    /// Global access inside a live object.
    Object(ObjectRef),
    /// Global access that hit no live object.
    Unattributed,
    /// On-chip shared-memory access; there is no device object to resolve.
    SharedSpace,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObjectRef {
    pub object_id: u64,
    pub base: u64,
    pub size: u64,
    /// The pool tensor containing the address, when one is live there.
    pub tensor: Option<TensorRef>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorRef {
    pub tensor_id: u64,
    pub address: u64,
    pub size: u64,
}

#[derive(Debug, Default)]
struct LiveObject {
    object_id: u64,
    base: u64,
    size: u64,
    /// tensor base address -> (tensor id, size)
    tensors: BTreeMap<u64, (u64, u64)>,
}

#[derive(Debug, Default)]
struct DeviceSpace {
    by_base: BTreeMap<u64, LiveObject>,
    base_of: HashMap<u64, u64>,
}

/// Live objects and tensors per device, maintained from lifecycle events.
#[derive(Debug, Default)]
pub struct LiveObjectTable {
    devices: HashMap<u32, DeviceSpace>,
}

impl LiveObjectTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Update the table from an object or tensor lifecycle event. Other
    /// events are ignored.
    pub fn apply(&mut self, event: &Event) {
        match &event.payload {
            EventPayload::ObjectEvent(info) => {
                let space = self.devices.entry(event.device).or_default();
                match info.action {
                    ObjectAction::Malloc => {
                        space.by_base.insert(
                            info.address,
                            LiveObject {
                                object_id: info.object_id,
                                base: info.address,
                                size: info.size_bytes,
                                tensors: BTreeMap::new(),
                            },
                        );
                        space.base_of.insert(info.object_id, info.address);
                    }
                    ObjectAction::Free => {
                        if let Some(base) = space.base_of.remove(&info.object_id) {
                            space.by_base.remove(&base);
                        }
                    }
                }
            }
            EventPayload::TensorEvent(info) => {
                let space = self.devices.entry(event.device).or_default();
                if let Some(base) = space.base_of.get(&info.object_id) {
                    if let Some(object) = space.by_base.get_mut(base) {
                        match info.action {
                            TensorAction::Alloc => {
                                object
                                    .tensors
                                    .insert(info.address, (info.tensor_id, info.size_bytes));
                            }
                            TensorAction::Reclaim => {
                                object.tensors.remove(&info.address);
                            }
                        }
                    }
                }
            }
            _ => {}
        }
    }

    /// Resolve a global access to the object (and tensor, if any) containing
    /// it.
    pub fn resolve(&self, device: u32, address: u64, size: u64) -> Resolution {
        let Some(space) = self.devices.get(&device) else {
            return Resolution::Unattributed;
        };
        let Some((_, object)) = space
            .by_base
            .range(..=address)
            .next_back()
            .filter(|(base, object)| address + size <= **base + object.size)
        else {
            return Resolution::Unattributed;
        };
        let tensor = object
            .tensors
            .range(..=address)
            .next_back()
            .filter(|(taddr, (_, tsize))| address + size <= **taddr + tsize)
            .map(|(taddr, (tensor_id, tsize))| TensorRef {
                tensor_id: *tensor_id,
                address: *taddr,
                size: *tsize,
            });
        Resolution::Object(ObjectRef {
            object_id: object.object_id,
            base: object.base,
            size: object.size,
            tensor,
        })
    }
}

/// Build the dispatch record for an event against the current live table.
pub fn preprocess(event: Event, table: &LiveObjectTable) -> DispatchRecord {
    let resolution = match &event.payload {
        EventPayload::MemAccess(info) => match info.space {
            MemSpace::Shared => Resolution::SharedSpace,
            MemSpace::Global => {
                table.resolve(event.device, info.address, u64::from(info.size_bytes))
            }
        },
        _ => Resolution::NotApplicable,
    };
    DispatchRecord { event, resolution }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{EventKind, MemAccessInfo, ObjectEventInfo, TensorEventInfo};

    fn object_event(device: u32, object_id: u64, address: u64, size: u64) -> Event {
        Event {
            seq: 0,
            device,
            timestamp_ns: 0,
            kind: EventKind::DeviceMalloc,
            payload: EventPayload::ObjectEvent(ObjectEventInfo {
                object_id,
                address,
                size_bytes: size,
                action: ObjectAction::Malloc,
            }),
            stack: None,
        }
    }

    fn access(device: u32, address: u64) -> Event {
        Event {
            seq: 1,
            device,
            timestamp_ns: 0,
            kind: EventKind::GlobalAccess,
            payload: EventPayload::MemAccess(MemAccessInfo {
                grid_id: 0,
                address,
                size_bytes: 32,
                is_write: false,
                space: MemSpace::Global,
            }),
            stack: None,
        }
    }

    #[test]
    fn access_at_object_base_plus_offset_resolves() {
        let mut table = LiveObjectTable::new();
        table.apply(&object_event(0, 9, 0x10000, 4096));
        let rec = preprocess(access(0, 0x10008), &table);
        match rec.resolution {
            Resolution::Object(obj) => {
                assert_eq!(obj.object_id, 9);
                assert_eq!(obj.tensor, None);
            }
            other => panic!("unexpected resolution {other:?}"),
        }
    }

    #[test]
    fn access_outside_live_objects_is_unattributed() {
        let mut table = LiveObjectTable::new();
        table.apply(&object_event(0, 9, 0x10000, 4096));
        assert_eq!(
            preprocess(access(0, 0x20000), &table).resolution,
            Resolution::Unattributed
        );
        // Same address on another device is also unattributed.
        assert_eq!(
            preprocess(access(1, 0x10008), &table).resolution,
            Resolution::Unattributed
        );
    }

    #[test]
    fn tensor_resolution_tracks_lifecycle() {
        let mut table = LiveObjectTable::new();
        table.apply(&object_event(0, 9, 0x10000, 4096));
        let tensor_alloc = Event {
            seq: 2,
            device: 0,
            timestamp_ns: 0,
            kind: EventKind::TensorAlloc,
            payload: EventPayload::TensorEvent(TensorEventInfo {
                tensor_id: 42,
                object_id: 9,
                address: 0x10200,
                size_bytes: 512,
                action: TensorAction::Alloc,
            }),
            stack: None,
        };
        table.apply(&tensor_alloc);
        match preprocess(access(0, 0x10210), &table).resolution {
            Resolution::Object(obj) => assert_eq!(obj.tensor.unwrap().tensor_id, 42),
            other => panic!("unexpected {other:?}"),
        }
        // Before the tensor's base: object resolves, tensor does not.
        match preprocess(access(0, 0x10000), &table).resolution {
            Resolution::Object(obj) => assert_eq!(obj.tensor, None),
            other => panic!("unexpected {other:?}"),
        }
    }
}
