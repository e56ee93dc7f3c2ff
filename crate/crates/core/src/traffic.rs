//! Constant-bit-rate GTP-U flow sources merged into one time-ordered stream.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Bps, FiveQi, Nanos, PacketRecord, NANOS_PER_SEC};
use crate::wire::{build_frame, FlowAddresses, FlowDescription, WireError, MAX_FRAME_BYTES, MIN_FRAME_BYTES};

/// Inner destination port used by generated flows.
pub const INNER_DST_PORT: u16 = 5201;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrafficError {
    #[error("flow {teid}: {reason}")]
    InvalidFlow { teid: u32, reason: String },
    #[error("duplicate TEID {0}")]
    DuplicateTeid(u32),
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub teid: u32,
    pub five_qi: FiveQi,
    pub inner_src_port: u16,
    pub rate_bps: Bps,
    pub frame_size: u32,
    pub start_ns: Nanos,
    pub stop_ns: Nanos,
    #[serde(default)]
    pub jitter_fraction: f64,
}

impl FlowSpec {
    pub fn validate(&self) -> Result<(), TrafficError> {
        let bad = |reason: String| {
            Err(TrafficError::InvalidFlow {
                teid: self.teid,
                reason,
            })
        };
        if self.rate_bps == 0 {
            return bad("rate must be positive".into());
        }
        let size = self.frame_size as usize;
        if !(MIN_FRAME_BYTES..=MAX_FRAME_BYTES).contains(&size) {
            return bad(format!(
                "frame size {size} outside {MIN_FRAME_BYTES}..={MAX_FRAME_BYTES}"
            ));
        }
        if self.start_ns >= self.stop_ns {
            return bad(format!("start {} not before stop {}", self.start_ns, self.stop_ns));
        }
        if !(0.0..1.0).contains(&self.jitter_fraction) {
            return bad(format!("jitter {} outside [0, 1)", self.jitter_fraction));
        }
        Ok(())
    }

    fn frame_bits(&self) -> u128 {
        self.frame_size as u128 * 8
    }

    /// Nominal inter-arrival gap, truncated to whole nanoseconds.
    pub fn gap(&self) -> Nanos {
        (self.frame_bits() * NANOS_PER_SEC as u128 / self.rate_bps as u128) as Nanos
    }

    /// Unjittered arrival time of the `k`-th packet. Computed from `k`
    /// directly so rounding never accumulates.
    pub fn nominal_time(&self, k: u64) -> u128 {
        self.start_ns as u128
            + k as u128 * self.frame_bits() * NANOS_PER_SEC as u128 / self.rate_bps as u128
    }

    /// Number of packets the flow emits in `[start, stop)`.
    pub fn packet_count(&self) -> u64 {
        let span = (self.stop_ns - self.start_ns) as u128 * self.rate_bps as u128;
        let per = self.frame_bits() * NANOS_PER_SEC as u128;
        span.div_ceil(per) as u64
    }

    pub fn description(&self, addresses: FlowAddresses) -> Result<FlowDescription, WireError> {
        FlowDescription {
            teid: self.teid,
            inner_src_port: self.inner_src_port,
            inner_dst_port: INNER_DST_PORT,
            payload_len: 0,
            addresses,
        }
        .with_frame_size(self.frame_size as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedPacket {
    pub record: PacketRecord,
    /// Index into the generator's flow list; selects the frame template.
    pub flow_index: usize,
}

struct FlowCursor {
    next_k: u64,
    last: Nanos,
    rng: Option<ChaCha8Rng>,
}

/// Lazy k-way merge of all flows. Ties on arrival time go to the flow listed
/// first, and `pkt_id` follows emission order.
pub struct TrafficGenerator {
    flows: Vec<FlowSpec>,
    templates: Vec<Vec<u8>>,
    cursors: Vec<FlowCursor>,
    heap: BinaryHeap<Reverse<(Nanos, usize)>>,
    next_pkt_id: u64,
}

fn flow_seed(seed: u64, teid: u32) -> u64 {
    seed ^ (teid as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl TrafficGenerator {
    pub fn new(flows: Vec<FlowSpec>, addresses: FlowAddresses, seed: u64) -> Result<Self, TrafficError> {
        let mut teids = std::collections::BTreeSet::new();
        let mut templates = Vec::with_capacity(flows.len());
        let mut cursors = Vec::with_capacity(flows.len());
        for f in &flows {
            f.validate()?;
            if !teids.insert(f.teid) {
                return Err(TrafficError::DuplicateTeid(f.teid));
            }
            templates.push(build_frame(&f.description(addresses)?)?);
            cursors.push(FlowCursor {
                next_k: 0,
                last: f.start_ns,
                rng: (f.jitter_fraction > 0.0)
                    .then(|| ChaCha8Rng::seed_from_u64(flow_seed(seed, f.teid))),
            });
        }
        let mut gen = TrafficGenerator {
            flows,
            templates,
            cursors,
            heap: BinaryHeap::new(),
            next_pkt_id: 0,
        };
        for i in 0..gen.flows.len() {
            gen.schedule(i);
        }
        Ok(gen)
    }

    pub fn flows(&self) -> &[FlowSpec] {
        &self.flows
    }

    pub fn template(&self, flow_index: usize) -> &[u8] {
        &self.templates[flow_index]
    }

    fn schedule(&mut self, i: usize) {
        let f = &self.flows[i];
        let c = &mut self.cursors[i];
        let base = f.nominal_time(c.next_k);
        if base >= f.stop_ns as u128 {
            return;
        }
        let base = base as Nanos;
        let t = match c.rng.as_mut() {
            None => base,
            Some(rng) => {
                let j = f.jitter_fraction;
                let shift = rng.gen_range(-j..=j) * f.gap() as f64;
                let t = (base as f64 + shift).round().max(0.0) as Nanos;
                t.clamp(c.last, f.stop_ns - 1)
            }
        };
        c.next_k += 1;
        c.last = t;
        self.heap.push(Reverse((t, i)));
    }
}

impl Iterator for TrafficGenerator {
    type Item = GeneratedPacket;

    fn next(&mut self) -> Option<GeneratedPacket> {
        let Reverse((t, i)) = self.heap.pop()?;
        self.schedule(i);
        let f = &self.flows[i];
        let record = PacketRecord::new(self.next_pkt_id, f.teid, f.frame_size, t);
        self.next_pkt_id += 1;
        Some(GeneratedPacket {
            record,
            flow_index: i,
        })
    }
}

/// Convenience wrapper: the full arrival stream as a vector.
pub fn emit(flows: &[FlowSpec], seed: u64) -> Result<Vec<GeneratedPacket>, TrafficError> {
    Ok(TrafficGenerator::new(flows.to_vec(), FlowAddresses::default(), seed)?.collect())
}
