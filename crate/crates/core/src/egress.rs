//! Egress stage: queue selection, tail-drop buffers, strict priority across
//! tiers, DWRR inside a tier, optional minimum-rate reservations and the
//! output link.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Bps, Nanos, PacketRecord, QueueId, ResourceType, ServiceTag, NANOS_PER_SEC, NANOS_PER_US,
};
use crate::wire::MAX_FRAME_BYTES;

const NANOBITS_PER_BYTE: u128 = 8 * NANOS_PER_SEC as u128;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EgressError {
    #[error("no queue mapped for ({tag}, {resource_type})")]
    UnmappedCombination {
        tag: ServiceTag,
        resource_type: ResourceType,
    },
    #[error("queue map references undefined queue {0}")]
    UndefinedQueue(QueueId),
    #[error("queue {0} defined twice")]
    DuplicateQueue(QueueId),
    #[error("queue {queue}: {reason}")]
    InvalidQueue { queue: QueueId, reason: String },
}

/// Which resource type a queue is reserved for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ResourceBinding {
    Any,
    Only(ResourceType),
}

impl fmt::Display for ResourceBinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResourceBinding::Any => f.write_str("ANY"),
            ResourceBinding::Only(rt) => rt.fmt(f),
        }
    }
}

impl FromStr for ResourceBinding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "ANY" {
            return Ok(ResourceBinding::Any);
        }
        s.parse().map(ResourceBinding::Only).map_err(|e| e.to_string())
    }
}

impl TryFrom<String> for ResourceBinding {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<ResourceBinding> for String {
    fn from(b: ResourceBinding) -> String {
        b.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueueConfig {
    pub queue_id: QueueId,
    /// 0 is the highest priority.
    pub tier: u8,
    pub resource_binding: ResourceBinding,
    pub buffer_bytes: u64,
    pub dwrr_quantum: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reserved_rate_bps: Option<Bps>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueueMapEntry {
    pub tag: ServiceTag,
    /// `None` matches every resource type.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resource_type: Option<ResourceType>,
    pub queue_id: QueueId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueueMap {
    pub queues: Vec<QueueConfig>,
    pub map: Vec<QueueMapEntry>,
}

/// Tier-0/1 buffers hold this much link time; their queueing delay bound is
/// exactly this value.
pub const HIGH_TIER_BUFFER_TIME: Nanos = 100 * NANOS_PER_US;
/// Lower tiers hold ten times as much.
pub const LOW_TIER_BUFFER_TIME: Nanos = 1_000 * NANOS_PER_US;
pub const DEFAULT_QUANTUM: u64 = MAX_FRAME_BYTES as u64;

impl QueueMap {
    /// The eight-queue, four-tier layout:
    ///
    /// | queue | tier | traffic                         |
    /// |-------|------|---------------------------------|
    /// | Q1    | 0    | Non-GBR* delay-critical         |
    /// | Q2    | 0    | GBR* delay-critical             |
    /// | Q3    | 1    | GBR dedicated                   |
    /// | Q4    | 2    | prioritized, any resource type  |
    /// | Q5–Q8 | 3    | shared Non-GBR*, GBR*, GBR, Non-GBR |
    ///
    /// Buffers are sized from the link rate so that tiers 0–1 drain in
    /// 100 us and tiers 2–3 in 1 ms (1 Mb and 10 Mb at 10 Gbps).
    pub fn default_for_link(capacity: Bps) -> Self {
        use ResourceType::*;
        use ServiceTag::*;
        let buf = |t: Nanos| crate::model::volume_in(capacity, t);
        let q = |id: u8, tier: u8, binding: ResourceBinding| QueueConfig {
            queue_id: QueueId(id),
            tier,
            resource_binding: binding,
            buffer_bytes: if tier <= 1 {
                buf(HIGH_TIER_BUFFER_TIME)
            } else {
                buf(LOW_TIER_BUFFER_TIME)
            },
            dwrr_quantum: DEFAULT_QUANTUM,
            reserved_rate_bps: None,
        };
        let e = |tag, rt, id| QueueMapEntry {
            tag,
            resource_type: rt,
            queue_id: QueueId(id),
        };
        QueueMap {
            queues: vec![
                q(1, 0, ResourceBinding::Only(NonGbrDc)),
                q(2, 0, ResourceBinding::Only(GbrDc)),
                q(3, 1, ResourceBinding::Only(Gbr)),
                q(4, 2, ResourceBinding::Any),
                q(5, 3, ResourceBinding::Only(NonGbrDc)),
                q(6, 3, ResourceBinding::Only(GbrDc)),
                q(7, 3, ResourceBinding::Only(Gbr)),
                q(8, 3, ResourceBinding::Only(NonGbr)),
            ],
            map: vec![
                e(DelayCritical, Some(NonGbrDc), 1),
                e(DelayCritical, Some(GbrDc), 2),
                e(Dedicated, Some(Gbr), 3),
                e(Prioritized, None, 4),
                e(Shared, Some(NonGbrDc), 5),
                e(Shared, Some(GbrDc), 6),
                e(Shared, Some(Gbr), 7),
                e(Shared, Some(NonGbr), 8),
            ],
        }
    }

    pub fn queue(&self, id: QueueId) -> Option<&QueueConfig> {
        self.queues.iter().find(|q| q.queue_id == id)
    }

    pub fn validate(&self) -> Result<(), EgressError> {
        let mut seen = BTreeMap::new();
        for q in &self.queues {
            if seen.insert(q.queue_id, ()).is_some() {
                return Err(EgressError::DuplicateQueue(q.queue_id));
            }
            let bad = |reason: &str| EgressError::InvalidQueue {
                queue: q.queue_id,
                reason: reason.to_string(),
            };
            if q.buffer_bytes == 0 {
                return Err(bad("buffer_bytes must be positive"));
            }
            if q.dwrr_quantum == 0 {
                return Err(bad("dwrr_quantum must be positive"));
            }
            if q.reserved_rate_bps == Some(0) {
                return Err(bad("reserved rate must be positive when set"));
            }
        }
        for e in &self.map {
            if !seen.contains_key(&e.queue_id) {
                return Err(EgressError::UndefinedQueue(e.queue_id));
            }
        }
        Ok(())
    }

    /// Exact (tag, type) entries win over tag-wide ones.
    pub fn select(&self, tag: ServiceTag, rtype: ResourceType) -> Result<QueueId, EgressError> {
        self.map
            .iter()
            .find(|e| e.tag == tag && e.resource_type == Some(rtype))
            .or_else(|| {
                self.map
                    .iter()
                    .find(|e| e.tag == tag && e.resource_type.is_none())
            })
            .map(|e| e.queue_id)
            .ok_or(EgressError::UnmappedCombination {
                tag,
                resource_type: rtype,
            })
    }

    /// Smallest buffer among tier-`tier` queues.
    pub fn tier_buffer(&self, tier: u8) -> Option<u64> {
        self.queues
            .iter()
            .filter(|q| q.tier == tier)
            .map(|q| q.buffer_bytes)
            .min()
    }
}

pub fn queue_select(
    tag: ServiceTag,
    rtype: ResourceType,
    map: &QueueMap,
) -> Result<QueueId, EgressError> {
    map.select(tag, rtype)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueResult {
    Accepted,
    TailDropped,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct QueueCounters {
    pub enqueued: u64,
    pub tail_dropped: u64,
    pub dequeued: u64,
    pub max_delay: Nanos,
    pub max_occupancy: u64,
    #[serde(skip)]
    delays: Vec<Nanos>,
}

impl QueueCounters {
    /// Queueing delays of every dequeued packet, in service order.
    pub fn delays(&self) -> &[Nanos] {
        &self.delays
    }

    /// Nearest-rank percentile of the recorded delays.
    pub fn percentile(&self, pct: f64) -> Nanos {
        percentile(&self.delays, pct)
    }
}

pub fn percentile(values: &[Nanos], pct: f64) -> Nanos {
    if values.is_empty() {
        return 0;
    }
    let mut v = values.to_vec();
    let rank = ((pct / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    let idx = rank.min(v.len()) - 1;
    *v.select_nth_unstable(idx).1
}

#[derive(Debug)]
struct Reservation {
    rate: Bps,
    depth: u128,
    level: u128,
    last: Nanos,
}

impl Reservation {
    fn refill(&mut self, now: Nanos) {
        let dt = now.saturating_sub(self.last) as u128;
        self.level = (self.level + self.rate as u128 * dt).min(self.depth);
        self.last = self.last.max(now);
    }
}

#[derive(Debug)]
struct QueueRuntime {
    cfg: QueueConfig,
    fifo: VecDeque<PacketRecord>,
    occupancy: u64,
    deficit: u64,
    reservation: Option<Reservation>,
    counters: QueueCounters,
}

#[derive(Debug)]
struct Tier {
    level: u8,
    members: Vec<usize>,
    cursor: usize,
    in_visit: bool,
}

impl Tier {
    fn advance(&mut self) {
        self.cursor = (self.cursor + 1) % self.members.len();
        self.in_visit = false;
    }
}

/// Serialisation clock of the output link. Sub-nanosecond remainders are
/// carried across back-to-back packets.
#[derive(Debug, Clone)]
pub struct Link {
    rate: Bps,
    busy_until: Nanos,
    remainder: u128,
}

impl Link {
    pub fn new(rate: Bps) -> Self {
        Link {
            rate,
            busy_until: 0,
            remainder: 0,
        }
    }

    pub fn rate(&self) -> Bps {
        self.rate
    }

    pub fn busy_until(&self) -> Nanos {
        self.busy_until
    }

    /// Starts sending `bytes` at `start` and returns the completion time.
    fn transmit(&mut self, start: Nanos, bytes: u64) -> Nanos {
        if start > self.busy_until {
            self.remainder = 0;
        }
        let num = bytes as u128 * NANOBITS_PER_BYTE + self.remainder;
        let rate = self.rate as u128;
        self.remainder = num % rate;
        self.busy_until = start + (num / rate) as Nanos;
        self.busy_until
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Departure {
    pub packet: PacketRecord,
    pub queue_id: QueueId,
    pub tier: u8,
    /// Instant the packet was selected for transmission.
    pub start: Nanos,
    /// `start - ingress_ts`.
    pub queue_delay: Nanos,
    /// Served through a reservation pre-emption rather than the priority order.
    pub via_reservation: bool,
}

#[derive(Debug)]
pub struct EgressState {
    queues: Vec<QueueRuntime>,
    tiers: Vec<Tier>,
    index: BTreeMap<QueueId, usize>,
    link: Link,
    backlog_pkts: usize,
}

impl EgressState {
    pub fn new(map: &QueueMap, capacity: Bps) -> Result<Self, EgressError> {
        map.validate()?;
        let mut queues = Vec::new();
        let mut index = BTreeMap::new();
        let mut tiers: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
        for (i, cfg) in map.queues.iter().enumerate() {
            index.insert(cfg.queue_id, i);
            tiers.entry(cfg.tier).or_default().push(i);
            let reservation = cfg.reserved_rate_bps.map(|rate| {
                let depth = cfg.dwrr_quantum as u128 * NANOBITS_PER_BYTE;
                Reservation {
                    rate,
                    depth,
                    level: depth,
                    last: 0,
                }
            });
            queues.push(QueueRuntime {
                cfg: cfg.clone(),
                fifo: VecDeque::new(),
                occupancy: 0,
                deficit: 0,
                reservation,
                counters: QueueCounters::default(),
            });
        }
        let tiers = tiers
            .into_iter()
            .map(|(level, members)| Tier {
                level,
                members,
                cursor: 0,
                in_visit: false,
            })
            .collect();
        Ok(EgressState {
            queues,
            tiers,
            index,
            link: Link::new(capacity),
            backlog_pkts: 0,
        })
    }

    pub fn link(&self) -> &Link {
        &self.link
    }

    pub fn is_empty(&self) -> bool {
        self.backlog_pkts == 0
    }

    pub fn backlog_packets(&self) -> usize {
        self.backlog_pkts
    }

    pub fn occupancy(&self, qid: QueueId) -> u64 {
        self.index.get(&qid).map_or(0, |&i| self.queues[i].occupancy)
    }

    pub fn queue_len(&self, qid: QueueId) -> usize {
        self.index.get(&qid).map_or(0, |&i| self.queues[i].fifo.len())
    }

    pub fn counters(&self, qid: QueueId) -> Option<&QueueCounters> {
        self.index.get(&qid).map(|&i| &self.queues[i].counters)
    }

    /// Queue configs with their counters, in queue-id order.
    pub fn queue_stats(&self) -> impl Iterator<Item = (&QueueConfig, &QueueCounters)> {
        self.index
            .values()
            .map(|&i| (&self.queues[i].cfg, &self.queues[i].counters))
    }

    pub fn tier_of(&self, qid: QueueId) -> Option<u8> {
        self.index.get(&qid).map(|&i| self.queues[i].cfg.tier)
    }

    pub fn enqueue(&mut self, pkt: PacketRecord, qid: QueueId) -> Result<EnqueueResult, EgressError> {
        let &i = self.index.get(&qid).ok_or(EgressError::UndefinedQueue(qid))?;
        let q = &mut self.queues[i];
        let size = pkt.size_bytes as u64;
        if q.occupancy + size > q.cfg.buffer_bytes {
            q.counters.tail_dropped += 1;
            return Ok(EnqueueResult::TailDropped);
        }
        q.occupancy += size;
        q.counters.enqueued += 1;
        q.counters.max_occupancy = q.counters.max_occupancy.max(q.occupancy);
        q.fifo.push_back(pkt);
        self.backlog_pkts += 1;
        Ok(EnqueueResult::Accepted)
    }

    fn reservation_pick(&mut self, now: Nanos) -> Option<usize> {
        let mut pick = None;
        for (i, q) in self.queues.iter_mut().enumerate() {
            let Some(res) = q.reservation.as_mut() else {
                continue;
            };
            res.refill(now);
            if pick.is_some() {
                continue;
            }
            if let Some(head) = q.fifo.front() {
                let need = head.size_bytes as u128 * NANOBITS_PER_BYTE;
                if res.level >= need {
                    res.level -= need;
                    pick = Some(i);
                }
            }
        }
        pick
    }

    fn dwrr_pick(&mut self, t: usize) -> usize {
        let tier = &mut self.tiers[t];
        loop {
            let qi = tier.members[tier.cursor];
            let q = &mut self.queues[qi];
            let Some(head) = q.fifo.front() else {
                q.deficit = 0;
                tier.advance();
                continue;
            };
            if !tier.in_visit {
                q.deficit += q.cfg.dwrr_quantum;
                tier.in_visit = true;
            }
            let size = head.size_bytes as u64;
            if q.deficit >= size {
                q.deficit -= size;
                if q.fifo.len() == 1 {
                    q.deficit = 0;
                    tier.advance();
                }
                return qi;
            }
            tier.advance();
        }
    }

    /// Serves one packet if the link is free at `now` and anything is queued.
    pub fn dequeue_next(&mut self, now: Nanos) -> Option<Departure> {
        if self.backlog_pkts == 0 || now < self.link.busy_until {
            return None;
        }
        let (qi, via_reservation) = match self.reservation_pick(now) {
            Some(qi) => (qi, true),
            None => {
                let t = self
                    .tiers
                    .iter()
                    .position(|t| t.members.iter().any(|&m| !self.queues[m].fifo.is_empty()))
                    .expect("backlog implies a nonempty tier");
                (self.dwrr_pick(t), false)
            }
        };
        let q = &mut self.queues[qi];
        let mut packet = q.fifo.pop_front().expect("picked queue is nonempty");
        if q.fifo.is_empty() {
            q.deficit = 0;
        }
        let size = packet.size_bytes as u64;
        q.occupancy -= size;
        self.backlog_pkts -= 1;
        let ingress = packet.meta.ingress_ts.unwrap_or(packet.arrival_time);
        let queue_delay = now.saturating_sub(ingress);
        q.counters.dequeued += 1;
        q.counters.max_delay = q.counters.max_delay.max(queue_delay);
        q.counters.delays.push(queue_delay);
        let queue_id = q.cfg.queue_id;
        let tier = q.cfg.tier;
        packet.departure_time = Some(self.link.transmit(now, size));
        Some(Departure {
            packet,
            queue_id,
            tier,
            start: now,
            queue_delay,
            via_reservation,
        })
    }

    pub fn tier_levels(&self) -> Vec<u8> {
        self.tiers.iter().map(|t| t.level).collect()
    }
}
