//! Token-bucket markers.
//!
//! Per-flow meters are color-blind two-rate three-color markers (RFC 2698).
//! Non-GBR traffic goes through one single-rate two-color meter per 5QI.
//!
//! Bucket levels are kept in nanobits (10^-9 bit) so that a refill of
//! `rate_bps * elapsed_ns` is exact integer arithmetic and no token is ever
//! lost to rounding.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::model::{Bps, Color, Conformance, FiveQi, FlowId, Marking, Nanos, ResourceType};

const NANOBITS_PER_BYTE: u128 = 8 * 1_000_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MeterError {
    #[error("meter array for 5QI {five_qi} is full ({limit} entries)")]
    CapacityExceeded { five_qi: FiveQi, limit: usize },
    #[error("meter matrix is full ({limit} entries in total)")]
    TotalCapacityExceeded { limit: usize },
    #[error("{count} guaranteed 5QIs need more than the {limit} available meter arrays")]
    TooManyArrays { count: usize, limit: usize },
    #[error("no meter configuration for 5QI {0}")]
    UnknownFiveQi(FiveQi),
    #[error("invalid meter parameters for 5QI {five_qi}: {reason}")]
    InvalidParams { five_qi: FiveQi, reason: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeterParams {
    pub cir_bps: Bps,
    pub pir_bps: Bps,
    pub cbs_bytes: u64,
    pub pbs_bytes: u64,
}

impl MeterParams {
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.cir_bps > self.pir_bps {
            return Err("cir exceeds pir");
        }
        if self.cbs_bytes == 0 {
            return Err("cbs must be positive");
        }
        if self.cbs_bytes > self.pbs_bytes {
            return Err("cbs exceeds pbs");
        }
        Ok(())
    }

    /// Parameters for a single-bucket aggregate meter.
    pub fn aggregate(pir_bps: Bps, pbs_bytes: u64) -> Self {
        MeterParams {
            cir_bps: pir_bps,
            pir_bps,
            cbs_bytes: pbs_bytes,
            pbs_bytes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeterState {
    params: MeterParams,
    tc: u128,
    tp: u128,
    last_update: Nanos,
}

impl MeterState {
    /// A meter with both buckets full.
    pub fn new(params: MeterParams) -> Self {
        MeterState {
            params,
            tc: params.cbs_bytes as u128 * NANOBITS_PER_BYTE,
            tp: params.pbs_bytes as u128 * NANOBITS_PER_BYTE,
            last_update: 0,
        }
    }

    pub fn params(&self) -> &MeterParams {
        &self.params
    }

    pub fn last_update(&self) -> Nanos {
        self.last_update
    }

    /// Committed bucket level in bytes (fractional).
    pub fn committed_bytes(&self) -> f64 {
        self.tc as f64 / NANOBITS_PER_BYTE as f64
    }

    /// Peak bucket level in bytes (fractional).
    pub fn peak_bytes(&self) -> f64 {
        self.tp as f64 / NANOBITS_PER_BYTE as f64
    }

    pub fn committed_nanobits(&self) -> u128 {
        self.tc
    }

    pub fn peak_nanobits(&self) -> u128 {
        self.tp
    }

    fn refill(&mut self, now: Nanos) {
        let dt = now.saturating_sub(self.last_update) as u128;
        let p = &self.params;
        let cmax = p.cbs_bytes as u128 * NANOBITS_PER_BYTE;
        let pmax = p.pbs_bytes as u128 * NANOBITS_PER_BYTE;
        self.tc = (self.tc + p.cir_bps as u128 * dt).min(cmax);
        self.tp = (self.tp + p.pir_bps as u128 * dt).min(pmax);
        self.last_update = self.last_update.max(now);
    }

    /// Color-blind trTCM.
    pub fn trtcm_mark(&mut self, now: Nanos, size: u32) -> Color {
        self.refill(now);
        let need = size as u128 * NANOBITS_PER_BYTE;
        if self.tp < need {
            Color::Red
        } else if self.tc < need {
            self.tp -= need;
            Color::Yellow
        } else {
            self.tc -= need;
            self.tp -= need;
            Color::Green
        }
    }

    /// Single bucket at `pir` with depth `pbs`; the committed bucket is unused.
    pub fn aggregate_mark(&mut self, now: Nanos, size: u32) -> Conformance {
        self.refill(now);
        let need = size as u128 * NANOBITS_PER_BYTE;
        if self.tp >= need {
            self.tp -= need;
            Conformance::Conform
        } else {
            Conformance::Exceed
        }
    }

    /// Marks empty; used to exercise the zero-token edge.
    pub fn drained(mut self) -> Self {
        self.tc = 0;
        self.tp = 0;
        self
    }
}

pub fn trtcm_mark(state: &mut MeterState, now: Nanos, size: u32) -> Color {
    state.trtcm_mark(now, size)
}

pub fn aggregate_mark(state: &mut MeterState, now: Nanos, size: u32) -> Conformance {
    state.aggregate_mark(now, size)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeterCapacity {
    pub per_array_max: usize,
    pub total_max: usize,
    pub max_arrays: usize,
}

impl Default for MeterCapacity {
    fn default() -> Self {
        MeterCapacity {
            per_array_max: 8192,
            total_max: 24_576,
            max_arrays: 23,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MeterHandle {
    Flow { five_qi: FiveQi, index: usize },
    Aggregate(FiveQi),
}

#[derive(Debug, Default)]
struct MeterArray {
    params: Option<MeterParams>,
    meters: Vec<MeterState>,
    index: HashMap<FlowId, usize>,
}

/// Per-flow trTCM arrays for guaranteed 5QIs and one aggregate meter for each
/// Non-GBR 5QI.
#[derive(Debug)]
pub struct MeterMatrix {
    capacity: MeterCapacity,
    arrays: BTreeMap<FiveQi, MeterArray>,
    aggregates: BTreeMap<FiveQi, MeterState>,
    allocated: usize,
}

impl MeterMatrix {
    pub fn new(
        config: impl IntoIterator<Item = (FiveQi, ResourceType, MeterParams)>,
        capacity: MeterCapacity,
    ) -> Result<Self, MeterError> {
        let mut arrays = BTreeMap::new();
        let mut aggregates = BTreeMap::new();
        for (five_qi, rt, params) in config {
            params
                .validate()
                .map_err(|reason| MeterError::InvalidParams { five_qi, reason })?;
            if rt.is_guaranteed() {
                arrays.insert(
                    five_qi,
                    MeterArray {
                        params: Some(params),
                        ..Default::default()
                    },
                );
            } else {
                aggregates.insert(five_qi, MeterState::new(params));
            }
        }
        if arrays.len() > capacity.max_arrays {
            return Err(MeterError::TooManyArrays {
                count: arrays.len(),
                limit: capacity.max_arrays,
            });
        }
        Ok(MeterMatrix {
            capacity,
            arrays,
            aggregates,
            allocated: 0,
        })
    }

    pub fn capacity(&self) -> MeterCapacity {
        self.capacity
    }

    /// Flow meters allocated so far across all arrays.
    pub fn allocated(&self) -> usize {
        self.allocated
    }

    /// Finds or allocates the meter for `(five_qi, flow_id)`.
    pub fn meter_for(&mut self, five_qi: FiveQi, flow_id: FlowId) -> Result<MeterHandle, MeterError> {
        if self.aggregates.contains_key(&five_qi) {
            return Ok(MeterHandle::Aggregate(five_qi));
        }
        let array = self
            .arrays
            .get_mut(&five_qi)
            .ok_or(MeterError::UnknownFiveQi(five_qi))?;
        if let Some(&index) = array.index.get(&flow_id) {
            return Ok(MeterHandle::Flow { five_qi, index });
        }
        if array.meters.len() >= self.capacity.per_array_max {
            return Err(MeterError::CapacityExceeded {
                five_qi,
                limit: self.capacity.per_array_max,
            });
        }
        if self.allocated >= self.capacity.total_max {
            return Err(MeterError::TotalCapacityExceeded {
                limit: self.capacity.total_max,
            });
        }
        let params = array.params.expect("arrays are built with params");
        let index = array.meters.len();
        array.meters.push(MeterState::new(params));
        array.index.insert(flow_id, index);
        self.allocated += 1;
        debug!(%five_qi, flow_id, index, "allocated flow meter");
        Ok(MeterHandle::Flow { five_qi, index })
    }

    pub fn state(&self, handle: MeterHandle) -> &MeterState {
        match handle {
            MeterHandle::Flow { five_qi, index } => &self.arrays[&five_qi].meters[index],
            MeterHandle::Aggregate(qi) => &self.aggregates[&qi],
        }
    }

    fn state_mut(&mut self, handle: MeterHandle) -> &mut MeterState {
        match handle {
            MeterHandle::Flow { five_qi, index } => {
                &mut self.arrays.get_mut(&five_qi).unwrap().meters[index]
            }
            MeterHandle::Aggregate(qi) => self.aggregates.get_mut(&qi).unwrap(),
        }
    }

    /// Runs the marker matching the handle's kind.
    pub fn mark(&mut self, handle: MeterHandle, now: Nanos, size: u32) -> Marking {
        let state = self.state_mut(handle);
        match handle {
            MeterHandle::Flow { .. } => Marking::Color(state.trtcm_mark(now, size)),
            MeterHandle::Aggregate(_) => Marking::Aggregate(state.aggregate_mark(now, size)),
        }
    }

    pub fn array_len(&self, five_qi: FiveQi) -> usize {
        self.arrays.get(&five_qi).map_or(0, |a| a.meters.len())
    }
}
