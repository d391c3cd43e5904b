//! Deterministic trace synthesis.
//!
//! A run is modeled the way DL frameworks execute: parameters are allocated
//! up front through the pool, each layer runs a few operators wrapping one to
//! four kernels, activations churn through cached chunks, and a raw workspace
//! buffer (allocated directly through the device API, never sub-divided into
//! tensors) serves scratch space for im2col/attention-score style kernels.
//!
//! Multi-device runs replicate (DP), shard sizes (TP), or split layers (PP).
//! DP and TP devices execute in lockstep with identical logical streams, so
//! per-device subsequences are equal up to the device index, the per-device
//! address base, and the per-device id base.

use rand::{seq::index::sample, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::event::{
    CallStack, CopyDirection, Event, EventKind, EventPayload, Frame, FrameLevel,
    KernelCompleteInfo, KernelLaunchInfo, MemAccessInfo, MemCopyInfo, MemSpace, ObjectAction,
    ObjectEventInfo, OperatorInfo, RangeMarkerInfo, TensorAction, TensorEventInfo,
};

use super::alloc::{PoolAllocator, TensorPlacement};
use super::{Mode, Parallelism, SpecError, ToyModel, WorkloadSpec};

const KIB: u64 = 1024;
const MIB: u64 = 1024 * 1024;
/// Bytes per access event; models a coalesced warp segment.
const ACCESS_GRANULE: u64 = 32;
/// Per-device virtual address ranges start here; device `d` owns
/// `[(d+1) << 40, (d+2) << 40)`. Host staging addresses stay below 1 << 40.
const DEVICE_ADDR_SHIFT: u32 = 40;
/// Per-device id ranges for tensors/objects/ops, so ids stay globally unique.
const DEVICE_ID_SHIFT: u32 = 32;
/// Fixed kernel launch overhead, microseconds.
const LAUNCH_OVERHEAD_US: u64 = 5;
/// Synthetic compute throughput: bytes of touched data per microsecond.
const TOUCHED_BYTES_PER_US: u64 = 16 * 1024;
const HOST_STAGING_BASE: u64 = 0x1000_0000;

/// Sampled accesses for one kernel over the given `(address, len, is_write)`
/// regions. Coverage is `ceil(rate * granules)` 32-byte granules per region,
/// all inside the region; `rate >= 1` tiles the region exactly, in order.
pub fn emit_kernel_accesses(
    rng: &mut ChaCha8Rng,
    grid_id: u64,
    regions: &[(u64, u64, bool)],
    rate: f64,
) -> Vec<MemAccessInfo> {
    let mut out = Vec::new();
    for &(addr, len, is_write) in regions {
        debug_assert_eq!(
            len % ACCESS_GRANULE,
            0,
            "region length must be granule-aligned"
        );
        let granules = (len / ACCESS_GRANULE) as usize;
        if granules == 0 {
            continue;
        }
        let wanted = ((rate * granules as f64).ceil() as usize).clamp(1, granules);
        let indices: Vec<usize> = if wanted == granules {
            (0..granules).collect()
        } else {
            let mut picked = sample(rng, granules, wanted).into_vec();
            picked.sort_unstable();
            picked
        };
        out.extend(indices.into_iter().map(|idx| MemAccessInfo {
            grid_id,
            address: addr + idx as u64 * ACCESS_GRANULE,
            size_bytes: ACCESS_GRANULE as u32,
            is_write,
            space: MemSpace::Global,
        }));
    }
    out
}

/// Generate the event stream for a workload spec. Deterministic: equal specs
/// produce equal streams.
pub fn generate_trace(spec: &WorkloadSpec) -> Result<Vec<Event>, SpecError> {
    spec.validate()?;
    let shape = ModelShape::of(spec);

    let streams: Vec<Vec<Event>> = match spec.parallelism {
        Parallelism::None => {
            let mut dev = DeviceGen::new(spec, shape.clone(), 0, 0);
            dev.run_full(0, spec.layers, true);
            vec![dev.events]
        }
        Parallelism::Dp | Parallelism::Tp => (0..spec.devices)
            .map(|device| {
                let mut dev = DeviceGen::new(spec, shape.clone(), device, 0);
                dev.run_full(0, spec.layers, true);
                dev.events
            })
            .collect(),
        Parallelism::Pp => {
            let per_device = spec.layers / spec.devices;
            let mut streams = Vec::new();
            let mut start_clock = 0;
            let mut boundary: Option<(u64, u64)> = None; // (addr, bytes) on prev device
            for device in 0..spec.devices {
                let first = device * per_device;
                let last = if device == spec.devices - 1 {
                    spec.layers
                } else {
                    first + per_device
                };
                let is_last = device == spec.devices - 1;
                let mut dev = DeviceGen::new(spec, shape.clone(), device, start_clock);
                dev.init_params(first, last, is_last);
                if let Some((src_addr, bytes)) = boundary {
                    dev.receive_activation(src_addr, bytes);
                } else {
                    dev.upload_input();
                }
                dev.run_layers(first, last, is_last);
                start_clock = dev.clock_us;
                boundary = dev.final_act.map(|p| (p.address, p.size));
                streams.push(dev.events);
            }
            streams
        }
    };

    Ok(merge_streams(streams, spec.parallelism))
}

/// Interleave per-device streams and assign global sequence numbers.
fn merge_streams(streams: Vec<Vec<Event>>, parallelism: Parallelism) -> Vec<Event> {
    let mut merged: Vec<Event> = match parallelism {
        // Lockstep replicas: one event from each device in turn, so replicas
        // stay adjacent and per-device order is preserved.
        Parallelism::Dp | Parallelism::Tp => {
            let len = streams[0].len();
            debug_assert!(streams.iter().all(|s| s.len() == len));
            let mut out = Vec::with_capacity(len * streams.len());
            let mut iters: Vec<_> = streams.into_iter().map(|s| s.into_iter()).collect();
            for _ in 0..len {
                for it in &mut iters {
                    out.push(it.next().expect("lockstep streams have equal length"));
                }
            }
            out
        }
        // Single device, or pipeline stages that run back to back.
        Parallelism::None | Parallelism::Pp => streams.into_iter().flatten().collect(),
    };
    for (seq, event) in merged.iter_mut().enumerate() {
        event.seq = seq as u64;
    }
    merged
}

// ---------------------------------------------------------------------------
// model shapes

#[derive(Clone)]
struct ModelShape {
    /// `(role, bytes)` of each per-layer parameter tensor.
    layer_weights: Vec<(&'static str, u64)>,
    head: Option<(&'static str, u64)>,
    act_bytes: u64,
    mlp_act_bytes: u64,
    workspace_bytes: u64,
    logits_bytes: u64,
}

impl ModelShape {
    fn of(spec: &WorkloadSpec) -> Self {
        let batch = spec.batch as u64;
        let mut shape = match spec.model {
            ToyModel::CnnToy => ModelShape {
                layer_weights: vec![("conv_w", 2 * MIB), ("conv_b", 64 * KIB)],
                head: None,
                act_bytes: batch * 32 * KIB,
                mlp_act_bytes: 0,
                // im2col scratch dominates conv-layer memory traffic
                workspace_bytes: batch * 512 * KIB,
                logits_bytes: 64 * KIB,
            },
            ToyModel::TransformerEncoderToy => ModelShape {
                layer_weights: vec![
                    ("w_qkv", 2 * MIB),
                    ("w_proj", 2 * MIB),
                    ("w_up", 4 * MIB),
                    ("w_down", 4 * MIB),
                    ("ln_w", 64 * KIB),
                ],
                head: Some(("pooler_w", MIB)),
                act_bytes: batch * 64 * KIB,
                mlp_act_bytes: batch * 128 * KIB,
                workspace_bytes: 2 * MIB,
                logits_bytes: 64 * KIB,
            },
            ToyModel::TransformerDecoderToy => ModelShape {
                layer_weights: vec![
                    ("w_qkv", 2 * MIB),
                    ("w_proj", 2 * MIB),
                    ("w_up", 4 * MIB),
                    ("w_down", 4 * MIB),
                    ("ln_w", 64 * KIB),
                ],
                head: Some(("lm_head_w", 4 * MIB)),
                act_bytes: batch * 64 * KIB,
                mlp_act_bytes: batch * 128 * KIB,
                workspace_bytes: 2 * MIB,
                logits_bytes: 256 * KIB,
            },
        };
        // Tensor parallelism shards every weight and activation evenly.
        if spec.parallelism == Parallelism::Tp {
            let n = spec.devices as u64;
            for (_, bytes) in &mut shape.layer_weights {
                *bytes /= n;
            }
            if let Some((_, bytes)) = &mut shape.head {
                *bytes /= n;
            }
            shape.act_bytes /= n;
            shape.mlp_act_bytes /= n;
            shape.workspace_bytes /= n;
            shape.logits_bytes /= n;
        }
        shape
    }
}

// ---------------------------------------------------------------------------
// per-device generation

#[derive(Clone, Copy)]
struct Region {
    addr: u64,
    len: u64,
    write: bool,
    object_id: u64,
}

impl Region {
    fn tensor(p: &TensorPlacement, write: bool) -> Self {
        Region {
            addr: p.address,
            len: p.size,
            write,
            object_id: p.object_id,
        }
    }
}

struct DeviceGen<'a> {
    spec: &'a WorkloadSpec,
    shape: ModelShape,
    device: u32,
    rng: ChaCha8Rng,
    pool: PoolAllocator,
    events: Vec<Event>,
    clock_us: u64,
    next_grid: u64,
    next_tensor: u64,
    next_object: u64,
    next_op: u64,
    next_range: u64,
    /// Parameter objects, candidates for never-accessed kernel arguments.
    weight_objects: Vec<u64>,
    weights: Vec<Vec<TensorPlacement>>, // per layer, in role order
    head_weight: Option<TensorPlacement>,
    workspaces: Vec<Region>,
    act_in: Option<TensorPlacement>,
    final_act: Option<TensorPlacement>,
    saved: Vec<SavedLayer>,
}

struct SavedLayer {
    layer: u32,
    acts: Vec<TensorPlacement>,
}

impl<'a> DeviceGen<'a> {
    fn new(spec: &'a WorkloadSpec, shape: ModelShape, device: u32, start_clock_us: u64) -> Self {
        let id_base = u64::from(device) << DEVICE_ID_SHIFT;
        DeviceGen {
            spec,
            shape,
            device,
            // Same seed on every device: replicas draw identical streams.
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            pool: PoolAllocator::new((u64::from(device) + 1) << DEVICE_ADDR_SHIFT),
            events: Vec::new(),
            clock_us: start_clock_us,
            next_grid: 0,
            next_tensor: id_base,
            next_object: id_base,
            next_op: id_base,
            next_range: id_base,
            weight_objects: Vec::new(),
            weights: Vec::new(),
            head_weight: None,
            workspaces: Vec::new(),
            act_in: None,
            final_act: None,
            saved: Vec::new(),
        }
    }

    fn ts(&self) -> u64 {
        self.clock_us * 1000
    }

    fn push(&mut self, kind: EventKind, payload: EventPayload) {
        self.push_with_stack(kind, payload, None);
    }

    fn push_with_stack(
        &mut self,
        kind: EventKind,
        payload: EventPayload,
        stack: Option<CallStack>,
    ) {
        self.events.push(Event {
            seq: 0, // assigned after streams are merged
            device: self.device,
            timestamp_ns: self.ts(),
            kind,
            payload,
            stack,
        });
    }

    fn alloc_tensor(&mut self, bytes: u64) -> TensorPlacement {
        let tensor_id = self.next_tensor;
        self.next_tensor += 1;
        let next_object = &mut self.next_object;
        let (placement, new_chunk) = self.pool.alloc_tensor(tensor_id, bytes, || {
            let id = *next_object;
            *next_object += 1;
            id
        });
        if let Some(chunk) = new_chunk {
            self.push(
                EventKind::DeviceMalloc,
                EventPayload::ObjectEvent(ObjectEventInfo {
                    object_id: chunk.object_id,
                    address: chunk.base,
                    size_bytes: chunk.size,
                    action: ObjectAction::Malloc,
                }),
            );
            self.clock_us += 1;
        }
        self.push(
            EventKind::TensorAlloc,
            EventPayload::TensorEvent(TensorEventInfo {
                tensor_id: placement.tensor_id,
                object_id: placement.object_id,
                address: placement.address,
                size_bytes: placement.size,
                action: TensorAction::Alloc,
            }),
        );
        self.clock_us += 1;
        placement
    }

    fn free_tensor(&mut self, placement: TensorPlacement) {
        self.pool
            .free_tensor(placement.tensor_id)
            .expect("freeing live tensor");
        self.push(
            EventKind::TensorReclaim,
            EventPayload::TensorEvent(TensorEventInfo {
                tensor_id: placement.tensor_id,
                object_id: placement.object_id,
                address: placement.address,
                size_bytes: placement.size,
                action: TensorAction::Reclaim,
            }),
        );
        self.clock_us += 1;
    }

    /// One raw scratch buffer per layer, allocated directly through the
    /// device API. These are never subdivided into tensors, mirroring
    /// library-managed workspace memory.
    fn alloc_workspaces(&mut self, layers: u32) {
        for _ in 0..layers {
            let object_id = self.next_object;
            self.next_object += 1;
            let chunk = self.pool.alloc_raw(object_id, self.shape.workspace_bytes);
            self.push(
                EventKind::DeviceMalloc,
                EventPayload::ObjectEvent(ObjectEventInfo {
                    object_id: chunk.object_id,
                    address: chunk.base,
                    size_bytes: chunk.size,
                    action: ObjectAction::Malloc,
                }),
            );
            self.clock_us += 1;
            self.workspaces.push(Region {
                addr: chunk.base,
                len: self.shape.workspace_bytes,
                write: false,
                object_id: chunk.object_id,
            });
        }
    }

    fn ws(&self, layer: u32, write: bool) -> Region {
        let mut region = self.workspaces[layer as usize];
        region.write = write;
        region
    }

    fn op_start(&mut self, name: &str) -> u64 {
        let op_id = self.next_op;
        self.next_op += 1;
        self.push(
            EventKind::OperatorStart,
            EventPayload::Operator(OperatorInfo {
                op_id,
                name: name.to_string(),
            }),
        );
        self.clock_us += 1;
        op_id
    }

    fn op_end(&mut self, op_id: u64, name: &str) {
        self.push(
            EventKind::OperatorEnd,
            EventPayload::Operator(OperatorInfo {
                op_id,
                name: name.to_string(),
            }),
        );
        self.clock_us += 1;
    }

    fn range_start(&mut self, label: &str) -> u64 {
        let range_id = self.next_range;
        self.next_range += 1;
        self.push(
            EventKind::RangeStart,
            EventPayload::RangeMarker(RangeMarkerInfo {
                range_id,
                label: label.to_string(),
            }),
        );
        self.clock_us += 1;
        range_id
    }

    fn range_end(&mut self, range_id: u64, label: &str) {
        self.push(
            EventKind::RangeEnd,
            EventPayload::RangeMarker(RangeMarkerInfo {
                range_id,
                label: label.to_string(),
            }),
        );
        self.clock_us += 1;
    }

    fn sync(&mut self) {
        self.push(EventKind::Sync, EventPayload::None);
        self.clock_us += 1;
    }

    fn stack_for(&self, kernel_name: &str, op_name: &str) -> CallStack {
        CallStack {
            frames: vec![
                Frame {
                    level: FrameLevel::Python,
                    function: "run_model".into(),
                    file: "train.py".into(),
                    line: 42,
                },
                Frame {
                    level: FrameLevel::Python,
                    function: "forward".into(),
                    file: "model.py".into(),
                    line: 118,
                },
                Frame {
                    level: FrameLevel::Framework,
                    function: format!("dispatch_{op_name}"),
                    file: "operators.cc".into(),
                    line: 301,
                },
                Frame {
                    level: FrameLevel::Native,
                    function: kernel_name.to_string(),
                    file: "kernels.cu".into(),
                    line: 77,
                },
            ],
        }
    }

    /// Launch one kernel: sampled accesses over `regions`, plus argument
    /// objects that are deliberately never touched.
    fn kernel(&mut self, name: &str, op_name: &str, regions: &[Region]) {
        let grid_id = self.next_grid;
        self.next_grid += 1;

        let raw: Vec<(u64, u64, bool)> = regions.iter().map(|r| (r.addr, r.len, r.write)).collect();
        let accesses =
            emit_kernel_accesses(&mut self.rng, grid_id, &raw, self.spec.access_sample_rate);
        let touched_bytes = accesses.len() as u64 * ACCESS_GRANULE;
        let dur_us = LAUNCH_OVERHEAD_US + touched_bytes.div_ceil(TOUCHED_BYTES_PER_US);

        let mut arg_objects: Vec<u64> = Vec::new();
        for region in regions {
            if !arg_objects.contains(&region.object_id) {
                arg_objects.push(region.object_id);
            }
        }
        // Pad the argument list with live parameter objects the kernel will
        // never touch, at roughly `untouched_arg_rate` of the final list.
        let rate = self.spec.untouched_arg_rate;
        if rate > 0.0 {
            let touched = arg_objects.len() as f64;
            let extras = (rate * touched / (1.0 - rate)).ceil() as usize;
            let candidates: Vec<u64> = self
                .weight_objects
                .iter()
                .copied()
                .filter(|id| !arg_objects.contains(id))
                .collect();
            let take = extras.min(candidates.len());
            if take > 0 {
                let mut picked = sample(&mut self.rng, candidates.len(), take).into_vec();
                picked.sort_unstable();
                arg_objects.extend(picked.into_iter().map(|i| candidates[i]));
            }
        }

        let launch_us = self.clock_us;
        let stack = self.stack_for(name, op_name);
        let block = 128 + 32 * (grid_id % 3) as u32;
        self.push_with_stack(
            EventKind::KernelLaunch,
            EventPayload::KernelLaunch(KernelLaunchInfo {
                kernel_name: name.to_string(),
                grid_id,
                grid_dims: (1 + (touched_bytes / (64 * KIB)) as u32, 1, 1),
                block_dims: (block, 1, 1),
                stream: 0,
                arg_objects,
            }),
            Some(stack),
        );

        // A little shared-memory traffic for texture on matmul-style kernels.
        if name.contains("gemm") {
            self.push(
                EventKind::SharedAccess,
                EventPayload::MemAccess(MemAccessInfo {
                    grid_id,
                    address: 0x100,
                    size_bytes: 16,
                    is_write: false,
                    space: MemSpace::Shared,
                }),
            );
        }

        let total = accesses.len().max(1) as u64;
        for (idx, mut access) in accesses.into_iter().enumerate() {
            self.clock_us = launch_us + (idx as u64 * dur_us) / total;
            access.grid_id = grid_id;
            let kind = match access.space {
                MemSpace::Global => EventKind::GlobalAccess,
                MemSpace::Shared => EventKind::SharedAccess,
            };
            self.push(kind, EventPayload::MemAccess(access));
        }

        self.clock_us = launch_us + dur_us;
        self.push(
            EventKind::KernelComplete,
            EventPayload::KernelComplete(KernelCompleteInfo { grid_id }),
        );
        self.clock_us += 2;
    }

    // -- workload phases ----------------------------------------------------

    fn run_full(&mut self, first_layer: u32, last_layer: u32, with_head: bool) {
        self.init_params(first_layer, last_layer, with_head);
        self.upload_input();
        self.run_layers(first_layer, last_layer, with_head);
    }

    fn init_params(&mut self, first_layer: u32, last_layer: u32, with_head: bool) {
        let op = self.op_start("param_init");
        for _layer in first_layer..last_layer {
            let mut placements = Vec::new();
            for (_role, bytes) in self.shape.layer_weights.clone() {
                let p = self.alloc_tensor(bytes);
                if !self.weight_objects.contains(&p.object_id) {
                    self.weight_objects.push(p.object_id);
                }
                placements.push(p);
            }
            self.weights.push(placements);
        }
        if with_head {
            if let Some((_, bytes)) = self.shape.head {
                let p = self.alloc_tensor(bytes);
                if !self.weight_objects.contains(&p.object_id) {
                    self.weight_objects.push(p.object_id);
                }
                self.head_weight = Some(p);
            }
        }
        self.alloc_workspaces(last_layer - first_layer);
        self.op_end(op, "param_init");
    }

    fn upload_input(&mut self) {
        let op = self.op_start("input_upload");
        let input = self.alloc_tensor(self.shape.act_bytes);
        self.push(
            EventKind::MemCopy,
            EventPayload::MemCopy(MemCopyInfo {
                src_addr: HOST_STAGING_BASE,
                dst_addr: input.address,
                size_bytes: input.size,
                direction: CopyDirection::HostToDevice,
            }),
        );
        self.clock_us += 1 + input.size / (8 * 1024); // 8 GB/s host link
        self.act_in = Some(input);
        self.op_end(op, "input_upload");
    }

    /// Pipeline stages above the first receive their input from the previous
    /// device instead of the host.
    fn receive_activation(&mut self, src_addr: u64, bytes: u64) {
        let op = self.op_start("recv_activation");
        let input = self.alloc_tensor(bytes);
        self.push(
            EventKind::MemCopy,
            EventPayload::MemCopy(MemCopyInfo {
                src_addr,
                dst_addr: input.address,
                size_bytes: bytes,
                direction: CopyDirection::DeviceToDevice,
            }),
        );
        self.clock_us += 1 + bytes / (16 * 1024);
        self.act_in = Some(input);
        self.op_end(op, "recv_activation");
    }

    fn run_layers(&mut self, first_layer: u32, last_layer: u32, with_head: bool) {
        let fwd = self.range_start("forward");
        for layer in first_layer..last_layer {
            let label = format!("layer_{layer}");
            let range = self.range_start(&label);
            match self.spec.model {
                ToyModel::CnnToy => self.conv_layer(layer - first_layer),
                ToyModel::TransformerEncoderToy | ToyModel::TransformerDecoderToy => {
                    self.transformer_layer(layer - first_layer)
                }
            }
            if self.spec.parallelism == Parallelism::Tp {
                self.all_reduce(self.act_in.expect("activation live"));
            }
            self.sync();
            self.range_end(range, &label);
        }
        self.range_end(fwd, "forward");

        if with_head {
            self.head_op();
        }
        match self.spec.mode {
            Mode::Inference => {
                if let Some(act) = self.act_in {
                    self.final_act = Some(act);
                }
            }
            Mode::Train => self.backward(first_layer, last_layer),
        }
    }

    fn conv_layer(&mut self, idx: u32) {
        let keep_for_backward = self.spec.mode == Mode::Train;
        let name = format!("conv2d_{idx}");
        let op = self.op_start(&name);
        let act_in = self.act_in.expect("input activation");
        let act_out = self.alloc_tensor(self.shape.act_bytes);
        let [conv_w, conv_b] = [self.weights[idx as usize][0], self.weights[idx as usize][1]];

        self.kernel(
            "im2col_kernel",
            &name,
            &[Region::tensor(&act_in, false), self.ws(idx, true)],
        );
        self.kernel(
            "sgemm_conv",
            &name,
            &[
                self.ws(idx, false),
                Region::tensor(&conv_w, false),
                Region::tensor(&act_out, true),
            ],
        );
        self.kernel(
            "bias_relu_kernel",
            &name,
            &[
                Region::tensor(&conv_b, false),
                Region::tensor(&act_out, true),
            ],
        );

        if keep_for_backward {
            self.saved.push(SavedLayer {
                layer: idx,
                acts: vec![act_in],
            });
        } else {
            self.free_tensor(act_in);
        }
        self.act_in = Some(act_out);
        self.op_end(op, &name);
    }

    fn transformer_layer(&mut self, idx: u32) {
        let keep = self.spec.mode == Mode::Train;
        let decoder = self.spec.model == ToyModel::TransformerDecoderToy;
        let w = &self.weights[idx as usize];
        let [w_qkv, w_proj, w_up, w_down, ln_w] = [w[0], w[1], w[2], w[3], w[4]];
        let act_in = self.act_in.expect("input activation");

        let attn = format!("attention_{idx}");
        let op = self.op_start(&attn);
        let attn_act = self.alloc_tensor(self.shape.act_bytes);
        self.kernel(
            "qkv_gemm",
            &attn,
            &[
                Region::tensor(&act_in, false),
                Region::tensor(&w_qkv, false),
                self.ws(idx, true),
            ],
        );
        if decoder {
            self.kernel("causal_mask_kernel", &attn, &[self.ws(idx, true)]);
        }
        self.kernel("softmax_kernel", &attn, &[self.ws(idx, true)]);
        self.kernel(
            "attn_proj_gemm",
            &attn,
            &[
                self.ws(idx, false),
                Region::tensor(&w_proj, false),
                Region::tensor(&attn_act, true),
            ],
        );
        self.op_end(op, &attn);

        let mlp = format!("mlp_{idx}");
        let op = self.op_start(&mlp);
        let mlp_act = self.alloc_tensor(self.shape.mlp_act_bytes);
        let act_out = self.alloc_tensor(self.shape.act_bytes);
        self.kernel(
            "mlp_up_gemm",
            &mlp,
            &[
                Region::tensor(&attn_act, false),
                Region::tensor(&w_up, false),
                Region::tensor(&mlp_act, true),
            ],
        );
        self.kernel("gelu_kernel", &mlp, &[Region::tensor(&mlp_act, true)]);
        self.kernel(
            "mlp_down_gemm",
            &mlp,
            &[
                Region::tensor(&mlp_act, false),
                Region::tensor(&w_down, false),
                Region::tensor(&act_out, true),
            ],
        );
        self.op_end(op, &mlp);

        let ln = format!("layernorm_{idx}");
        let op = self.op_start(&ln);
        self.kernel(
            "layernorm_kernel",
            &ln,
            &[Region::tensor(&ln_w, false), Region::tensor(&act_out, true)],
        );
        self.op_end(op, &ln);

        if keep {
            self.saved.push(SavedLayer {
                layer: idx,
                acts: vec![act_in, attn_act, mlp_act],
            });
        } else {
            self.free_tensor(mlp_act);
            self.free_tensor(attn_act);
            self.free_tensor(act_in);
        }
        self.act_in = Some(act_out);
    }

    fn head_op(&mut self) {
        let (kernel_name, op_name) = match self.spec.model {
            ToyModel::CnnToy => ("reduce_logits", "classifier"),
            ToyModel::TransformerEncoderToy => ("pooler_gemm", "pooler"),
            ToyModel::TransformerDecoderToy => ("lm_head_gemm", "lm_head"),
        };
        let op = self.op_start(op_name);
        let act_in = self.act_in.expect("input activation");
        let logits = self.alloc_tensor(self.shape.logits_bytes);
        let mut regions = vec![
            Region::tensor(&act_in, false),
            Region::tensor(&logits, true),
        ];
        if let Some(head) = self.head_weight {
            regions.insert(1, Region::tensor(&head, false));
        }
        self.kernel(kernel_name, op_name, &regions);
        self.op_end(op, op_name);
        if self.spec.mode == Mode::Inference {
            self.final_act = Some(logits);
            // Results leave the device; the input chain ends here.
            self.push(
                EventKind::MemCopy,
                EventPayload::MemCopy(MemCopyInfo {
                    src_addr: logits.address,
                    dst_addr: HOST_STAGING_BASE + 0x10_0000,
                    size_bytes: logits.size,
                    direction: CopyDirection::DeviceToHost,
                }),
            );
            self.clock_us += 1;
            self.free_tensor(act_in);
            self.act_in = None;
            self.free_tensor(logits);
        } else {
            self.free_tensor(logits);
        }
    }

    fn backward(&mut self, first_layer: u32, last_layer: u32) {
        let bwd = self.range_start("backward");
        let loss_op = self.op_start("loss");
        let act = self.act_in.expect("forward output live");
        let mut grad_in = self.alloc_tensor(self.shape.act_bytes);
        self.kernel(
            "softmax_xent_kernel",
            "loss",
            &[Region::tensor(&act, false), Region::tensor(&grad_in, true)],
        );
        self.free_tensor(act);
        self.act_in = None;
        self.op_end(loss_op, "loss");

        for layer in (first_layer..last_layer).rev() {
            let idx = (layer - first_layer) as usize;
            let label = format!("layer_{layer}_bwd");
            let range = self.range_start(&label);
            let saved = self.saved.pop().expect("saved activations for backward");
            debug_assert_eq!(saved.layer as usize, idx);
            let w = self.weights[idx].clone();

            let name = format!("backward_{layer}");
            let op = self.op_start(&name);
            let grad_out = self.alloc_tensor(self.shape.act_bytes);
            let grad_w = self.alloc_tensor(w[0].size);
            let mut data_regions = vec![
                Region::tensor(&grad_in, false),
                Region::tensor(&w[0], false),
                Region::tensor(&grad_out, true),
            ];
            if let Some(extra) = saved.acts.last() {
                data_regions.push(Region::tensor(extra, false));
            }
            self.kernel("bwd_data_gemm", &name, &data_regions);
            self.kernel(
                "bwd_weight_gemm",
                &name,
                &[
                    Region::tensor(&grad_in, false),
                    Region::tensor(&saved.acts[0], false),
                    Region::tensor(&grad_w, true),
                ],
            );
            for act in saved.acts {
                self.free_tensor(act);
            }
            self.free_tensor(grad_in);
            self.op_end(op, &name);

            if matches!(self.spec.parallelism, Parallelism::Dp | Parallelism::Tp) {
                self.all_reduce(grad_w);
            }

            let sgd = format!("sgd_step_{layer}");
            let op = self.op_start(&sgd);
            self.kernel(
                "sgd_update_kernel",
                &sgd,
                &[Region::tensor(&grad_w, false), Region::tensor(&w[0], true)],
            );
            self.free_tensor(grad_w);
            self.op_end(op, &sgd);

            grad_in = grad_out;
            self.range_end(range, &label);
        }
        self.free_tensor(grad_in);
        self.range_end(bwd, "backward");
    }

    /// Staged all-reduce: device -> host -> device, so each device's events
    /// reference only its own addresses plus a shared host staging buffer.
    fn all_reduce(&mut self, tensor: TensorPlacement) {
        let staging = HOST_STAGING_BASE + 0x100_0000;
        self.push(
            EventKind::MemCopy,
            EventPayload::MemCopy(MemCopyInfo {
                src_addr: tensor.address,
                dst_addr: staging,
                size_bytes: tensor.size,
                direction: CopyDirection::DeviceToHost,
            }),
        );
        self.clock_us += 1 + tensor.size / (8 * 1024);
        self.push(
            EventKind::MemCopy,
            EventPayload::MemCopy(MemCopyInfo {
                src_addr: staging,
                dst_addr: tensor.address,
                size_bytes: tensor.size,
                direction: CopyDirection::HostToDevice,
            }),
        );
        self.clock_us += 1 + tensor.size / (8 * 1024);
        self.sync();
    }
}
