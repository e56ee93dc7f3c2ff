//! Run results and their CSV/JSON exports.

use std::fs;
use std::io;
use std::path::Path;
use std::time::Duration;

use serde::Serialize;

use crate::analytics::{Admission, AnalyticOutputs, ArrivalRates};
use crate::config::Mode;
use crate::model::{Bps, FiveQi, FlowId, Nanos, QueueId, ResourceType};

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FlowMetrics {
    pub flow_id: FlowId,
    pub five_qi: FiveQi,
    pub resource_type: Option<ResourceType>,
    pub offered_bps: Bps,
    pub start_ns: Nanos,
    pub stop_ns: Nanos,
    pub sent_pkts: u64,
    pub sent_bytes: u64,
    pub green_pkts: u64,
    pub yellow_pkts: u64,
    pub meter_red: u64,
    pub meter_drops: u64,
    pub queue_drops: u64,
    pub delivered_pkts: u64,
    pub delivered_bytes: u64,
    pub pdb_lost: u64,
    /// Largest arrival-to-departure time.
    pub max_delay_ns: Nanos,
    /// Bytes delivered in each measurement window, by departure time.
    pub window_bytes: Vec<u64>,
}

impl FlowMetrics {
    pub fn throughput_bps(&self) -> f64 {
        let span = self.stop_ns.saturating_sub(self.start_ns);
        if span == 0 {
            return 0.0;
        }
        self.delivered_bytes as f64 * 8e9 / span as f64
    }

    pub fn loss_rate(&self) -> f64 {
        if self.sent_pkts == 0 {
            return 0.0;
        }
        (self.meter_drops + self.queue_drops) as f64 / self.sent_pkts as f64
    }

    /// Share of delivered packets within the delay budget.
    pub fn within_budget(&self) -> f64 {
        if self.delivered_pkts == 0 {
            return 1.0;
        }
        1.0 - self.pdb_lost as f64 / self.delivered_pkts as f64
    }

    pub fn is_conserved(&self) -> bool {
        self.sent_pkts == self.delivered_pkts + self.meter_drops + self.queue_drops
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueueMetrics {
    pub queue_id: QueueId,
    pub tier: u8,
    pub enqueued: u64,
    pub tail_dropped: u64,
    pub dequeued: u64,
    pub max_occupancy: u64,
    pub max_delay_ns: Nanos,
    pub p50_delay_ns: Nanos,
    pub p99_delay_ns: Nanos,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlertKind {
    /// A delay-critical queue exceeded the highest-tier bound in a window.
    DelayBound {
        queue_id: QueueId,
        max_delay_ns: Nanos,
        bound_ns: Nanos,
    },
    /// A GBR flow had under 98% of its packets within budget in a window.
    GbrBudget { flow_id: FlowId, within: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Alert {
    pub window: u64,
    #[serde(flatten)]
    pub kind: AlertKind,
}

/// A change a hook would like the control plane to make. Recorded, never
/// applied.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ConfigDelta {
    SetPriorityThreshold { threshold: u8 },
    SetQueueReservation { queue_id: QueueId, rate_bps: Bps },
    SetMeterRates { five_qi: FiveQi, cir_bps: Bps, pir_bps: Bps },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProposedDelta {
    pub window: u64,
    pub delta: ConfigDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub link_bps: Bps,
    pub flows: usize,
    pub offered_load_ratio: f64,
    pub admission: Admission,
    pub analytics: Option<AnalyticOutputs>,
    pub arrivals: ArrivalRates,
    pub packets_generated: u64,
    pub packets_delivered: u64,
    pub meter_drops: u64,
    pub queue_drops: u64,
    /// Largest queueing delay per tier.
    pub tier_max_delay_ns: Vec<(u8, Nanos)>,
    /// Largest queueing delay of a DELAY_CRITICAL-tagged packet.
    pub delay_critical_max_ns: Nanos,
    /// GBR flows with under 98% of packets within budget over the run.
    pub gbr_budget_violations: Vec<FlowId>,
    pub alerts: Vec<Alert>,
    pub proposed_deltas: Vec<ProposedDelta>,
    pub windows: u64,
    pub events: u64,
    pub sim_end_ns: Nanos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TraceRecord {
    pub pkt_id: u64,
    pub flow_id: FlowId,
    pub queue_id: QueueId,
    pub tier: u8,
    pub arrival: Nanos,
    pub start: Nanos,
    pub departure: Nanos,
}

#[derive(Debug, Clone)]
pub struct RunMetrics {
    /// Sorted by flow id.
    pub flows: Vec<FlowMetrics>,
    /// Sorted by queue id.
    pub queues: Vec<QueueMetrics>,
    pub summary: RunSummary,
    /// Kept out of the exports so repeated runs stay byte-identical.
    pub wall_clock: Duration,
    pub trace: Option<Vec<TraceRecord>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}` (expected csv or json)")),
        }
    }
}

#[derive(Serialize)]
struct FlowRow {
    flow_id: FlowId,
    five_qi: FiveQi,
    resource_type: String,
    sent_pkts: u64,
    sent_bytes: u64,
    meter_drops: u64,
    queue_drops: u64,
    delivered_bytes: u64,
    throughput_bps: u64,
    loss_rate: f64,
    pdb_lost: u64,
}

impl From<&FlowMetrics> for FlowRow {
    fn from(f: &FlowMetrics) -> Self {
        FlowRow {
            flow_id: f.flow_id,
            five_qi: f.five_qi,
            resource_type: f.resource_type.map_or_else(String::new, |r| r.to_string()),
            sent_pkts: f.sent_pkts,
            sent_bytes: f.sent_bytes,
            meter_drops: f.meter_drops,
            queue_drops: f.queue_drops,
            delivered_bytes: f.delivered_bytes,
            throughput_bps: f.throughput_bps().round() as u64,
            loss_rate: f.loss_rate(),
            pdb_lost: f.pdb_lost,
        }
    }
}

#[derive(Serialize)]
struct QueueRow {
    queue_id: String,
    tier: u8,
    enqueued: u64,
    tail_dropped: u64,
    max_delay_ns: Nanos,
    p50_delay_ns: Nanos,
    p99_delay_ns: Nanos,
}

impl From<&QueueMetrics> for QueueRow {
    fn from(q: &QueueMetrics) -> Self {
        QueueRow {
            queue_id: q.queue_id.to_string(),
            tier: q.tier,
            enqueued: q.enqueued,
            tail_dropped: q.tail_dropped,
            max_delay_ns: q.max_delay_ns,
            p50_delay_ns: q.p50_delay_ns,
            p99_delay_ns: q.p99_delay_ns,
        }
    }
}

fn to_csv<R: Serialize>(rows: impl Iterator<Item = R>) -> io::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

impl RunMetrics {
    pub fn flows_csv(&self) -> io::Result<String> {
        to_csv(self.flows.iter().map(FlowRow::from))
    }

    pub fn queues_csv(&self) -> io::Result<String> {
        to_csv(self.queues.iter().map(QueueRow::from))
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serialises") + "\n"
    }

    pub fn flow(&self, flow_id: FlowId) -> Option<&FlowMetrics> {
        self.flows
            .binary_search_by_key(&flow_id, |f| f.flow_id)
            .ok()
            .map(|i| &self.flows[i])
    }

    pub fn queue(&self, qid: QueueId) -> Option<&QueueMetrics> {
        self.queues.iter().find(|q| q.queue_id == qid)
    }

    /// Writes the three export files into `dir` and returns their names.
    pub fn write(&self, dir: &Path, format: Format) -> io::Result<Vec<String>> {
        fs::create_dir_all(dir)?;
        let files = match format {
            Format::Csv => vec![
                ("flows.csv", self.flows_csv()?),
                ("queues.csv", self.queues_csv()?),
            ],
            Format::Json => {
                let flows: Vec<FlowRow> = self.flows.iter().map(FlowRow::from).collect();
                let queues: Vec<QueueRow> = self.queues.iter().map(QueueRow::from).collect();
                vec![
                    ("flows.json", serde_json::to_string_pretty(&flows)? + "\n"),
                    ("queues.json", serde_json::to_string_pretty(&queues)? + "\n"),
                ]
            }
        };
        let mut names = Vec::new();
        for (name, body) in files.into_iter().chain([("summary.json", self.summary_json())]) {
            fs::write(dir.join(name), body)?;
            names.push(name.to_string());
        }
        Ok(names)
    }
}
