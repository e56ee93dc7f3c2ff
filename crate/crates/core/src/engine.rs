//! Discrete-event loop: generator -> parse -> classify -> meter -> tag ->
//! queue -> link, plus delay-budget accounting and the monitoring hook.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use thiserror::Error;
use tracing::{debug, info};

use crate::analytics::{analyze, drain_time, AnalyticInputs, AnalyticsError, FlowRates};
use crate::classifier::{classify, ClassifyError};
use crate::config::{ConfigError, Mode, ScenarioConfig};
use crate::egress::{Departure, EgressError, EgressState, EnqueueResult};
use crate::meter::{MeterError, MeterMatrix, MeterParams};
use crate::metrics::{
    Alert, AlertKind, ConfigDelta, FlowMetrics, ProposedDelta, QueueMetrics, RunMetrics,
    RunSummary, TraceRecord,
};
use crate::model::{
    Color, FiveQi, FlowId, Marking, Nanos, PacketRecord, QosProfile, QueueId, ResourceType,
    ServiceTag,
};
use crate::tagging::{tag, TagDecision};
use crate::traffic::{TrafficError, TrafficGenerator};
use crate::wire::{parse_frame, FlowAddresses, WireError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Meter(#[from] MeterError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Egress(#[from] EgressError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
}

/// Fraction of a GBR flow's packets that must stay within budget.
pub const GBR_BUDGET_SHARE: f64 = 0.98;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdbVerdict {
    Ok,
    Lost,
}

/// Delay-budget check for one delivered packet. Delay-critical and GBR
/// profiles compare the in-switch delay with the core-network budget;
/// Non-GBR traffic has no budget here.
pub fn pdb_account(pkt: &PacketRecord, profile: &QosProfile) -> PdbVerdict {
    let Some(dep) = pkt.departure_time else {
        return PdbVerdict::Ok;
    };
    if profile.resource_type == ResourceType::NonGbr {
        return PdbVerdict::Ok;
    }
    if dep.saturating_sub(pkt.arrival_time) > profile.cn_pdb() {
        PdbVerdict::Lost
    } else {
        PdbVerdict::Ok
    }
}

/// Per-window view handed to the reconfiguration hook.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSnapshot {
    pub index: u64,
    pub start: Nanos,
    pub end: Nanos,
    /// Highest-tier bound B/R.
    pub d_h: Nanos,
    /// (queue, tier, max queueing delay) for queues that served packets.
    pub queue_max_delay: Vec<(QueueId, u8, Nanos)>,
    /// (flow, delivered, late) for GBR flows that delivered packets.
    pub gbr_flows: Vec<(FlowId, u64, u64)>,
}

pub trait ReconfigureHook {
    /// Called at each window boundary. Alerts are pushed into `alerts`; the
    /// returned deltas are recorded but never applied.
    fn on_window(&mut self, snapshot: &WindowSnapshot, alerts: &mut Vec<Alert>) -> Vec<ConfigDelta>;
}

/// Raises an alert when a tier-0 queue exceeds B/R or a GBR flow falls
/// below the 98% budget share. Proposes nothing.
#[derive(Debug, Default)]
pub struct AlertingHook;

impl ReconfigureHook for AlertingHook {
    fn on_window(&mut self, snap: &WindowSnapshot, alerts: &mut Vec<Alert>) -> Vec<ConfigDelta> {
        for &(queue_id, tier, max_delay_ns) in &snap.queue_max_delay {
            if tier == 0 && max_delay_ns > snap.d_h {
                alerts.push(Alert {
                    window: snap.index,
                    kind: AlertKind::DelayBound {
                        queue_id,
                        max_delay_ns,
                        bound_ns: snap.d_h,
                    },
                });
            }
        }
        for &(flow_id, delivered, late) in &snap.gbr_flows {
            let within = 1.0 - late as f64 / delivered as f64;
            if within < GBR_BUDGET_SHARE {
                alerts.push(Alert {
                    window: snap.index,
                    kind: AlertKind::GbrBudget { flow_id, within },
                });
            }
        }
        Vec::new()
    }
}

pub struct EngineOptions {
    pub record_trace: bool,
    pub hook: Box<dyn ReconfigureHook>,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            record_trace: false,
            hook: Box::new(AlertingHook),
        }
    }
}

/// Analytic model inputs implied by a scenario.
pub fn analytic_inputs(cfg: &ScenarioConfig) -> AnalyticInputs {
    let mut flows = Vec::new();
    let mut active_ng: BTreeMap<FiveQi, bool> = BTreeMap::new();
    for f in &cfg.flows {
        let (Some(profile), Some(params)) = (cfg.profile(f.five_qi), cfg.meters.params.get(&f.five_qi))
        else {
            continue;
        };
        let prioritized = cfg.policy.is_prioritized(profile.priority_level);
        if profile.resource_type.is_guaranteed() {
            flows.push(FlowRates {
                cir_bps: params.cir_bps,
                pir_bps: params.pir_bps,
                prioritized,
            });
        } else {
            active_ng.insert(f.five_qi, prioritized);
        }
    }
    let mut pir_ng = 0u64;
    let mut pir_ng_prio = 0u64;
    for (qi, prioritized) in &active_ng {
        let pir = cfg.meters.params[qi].pir_bps;
        pir_ng += pir;
        if *prioritized {
            pir_ng_prio += pir;
        }
    }
    let p = cfg.policy.nongbr_prioritized_fraction.unwrap_or(if pir_ng == 0 {
        0.0
    } else {
        pir_ng_prio as f64 / pir_ng as f64
    });
    AnalyticInputs {
        link_bps: cfg.link.capacity_bps,
        flows,
        pir_ng_bps: pir_ng,
        p,
        buffer_bytes: cfg
            .queues
            .tier_buffer(0)
            .or_else(|| cfg.queues.queues.iter().map(|q| q.buffer_bytes).min())
            .unwrap_or(0),
    }
}

/// Meter configuration for the run. BASELINE mode replaces each guaranteed
/// 5QI's per-flow parameters with their sum over the 5QI's flows.
fn meter_config(cfg: &ScenarioConfig) -> Vec<(FiveQi, ResourceType, MeterParams)> {
    let base = cfg.meter_config();
    if cfg.mode == Mode::Flow {
        return base;
    }
    let mut counts: BTreeMap<FiveQi, u64> = BTreeMap::new();
    for f in &cfg.flows {
        *counts.entry(f.five_qi).or_default() += 1;
    }
    base.into_iter()
        .map(|(qi, rt, p)| {
            if !rt.is_guaranteed() {
                return (qi, rt, p);
            }
            let n = counts.get(&qi).copied().unwrap_or(1).max(1);
            (
                qi,
                rt,
                MeterParams {
                    cir_bps: p.cir_bps * n,
                    pir_bps: p.pir_bps * n,
                    cbs_bytes: p.cbs_bytes * n,
                    pbs_bytes: p.pbs_bytes * n,
                },
            )
        })
        .collect()
}

/// Every BASELINE flow of a 5QI shares the meter keyed by this id.
const SHARED_METER_KEY: FlowId = 0;

struct WindowState {
    index: u64,
    queue_max: BTreeMap<QueueId, (u8, Nanos)>,
    gbr: BTreeMap<FlowId, (u64, u64)>,
}

struct Engine<'c> {
    cfg: &'c ScenarioConfig,
    gen: TrafficGenerator,
    meters: MeterMatrix,
    egress: EgressState,
    flows: Vec<FlowMetrics>,
    by_teid: HashMap<u32, usize>,
    clock: Nanos,
    events: u64,
    window: WindowState,
    d_h: Nanos,
    hook: Box<dyn ReconfigureHook>,
    alerts: Vec<Alert>,
    deltas: Vec<ProposedDelta>,
    trace: Option<Vec<TraceRecord>>,
    delay_critical_max: Nanos,
    tier_max: BTreeMap<u8, Nanos>,
}

impl Engine<'_> {
    fn close_windows_until(&mut self, t: Nanos) {
        let w = self.cfg.measurement_window;
        while t >= (self.window.index + 1) * w {
            self.close_window();
        }
    }

    fn close_window(&mut self) {
        let w = self.cfg.measurement_window;
        let snapshot = WindowSnapshot {
            index: self.window.index,
            start: self.window.index * w,
            end: (self.window.index + 1) * w,
            d_h: self.d_h,
            queue_max_delay: self
                .window
                .queue_max
                .iter()
                .map(|(q, (tier, d))| (*q, *tier, *d))
                .collect(),
            gbr_flows: self
                .window
                .gbr
                .iter()
                .map(|(f, (n, late))| (*f, *n, *late))
                .collect(),
        };
        let deltas = self.hook.on_window(&snapshot, &mut self.alerts);
        self.deltas.extend(deltas.into_iter().map(|delta| ProposedDelta {
            window: snapshot.index,
            delta,
        }));
        self.window.index += 1;
        self.window.queue_max.clear();
        self.window.gbr.clear();
    }

    fn arrive(&mut self, mut pkt: PacketRecord, flow_index: usize) -> Result<(), EngineError> {
        let now = pkt.arrival_time;
        let headers = parse_frame(self.gen.template(flow_index))?;
        let class = classify(&headers, &self.cfg.port_map, &self.cfg.profiles)?;
        let profile = class.profile;
        let fi = *self
            .by_teid
            .get(&class.flow_id)
            .expect("every generated TEID is registered");
        let stats = &mut self.flows[fi];
        stats.sent_pkts += 1;
        stats.sent_bytes += pkt.size_bytes as u64;
        pkt.flow_id = class.flow_id;
        pkt.meta.five_qi = Some(class.five_qi);
        pkt.meta.resource_type = Some(profile.resource_type);
        pkt.meta.priority_level = Some(profile.priority_level);
        pkt.meta.ingress_ts = Some(now);

        let key = match self.cfg.mode {
            Mode::Flow => class.flow_id,
            Mode::Baseline => SHARED_METER_KEY,
        };
        let handle = self.meters.meter_for(class.five_qi, key)?;
        let marking = self.meters.mark(handle, now, pkt.size_bytes);
        pkt.meta.marking = Some(marking);
        match marking {
            Marking::Color(Color::Green) => stats.green_pkts += 1,
            Marking::Color(Color::Yellow) => stats.yellow_pkts += 1,
            Marking::Color(Color::Red) => stats.meter_red += 1,
            Marking::Aggregate(_) => {}
        }
        let service = match tag(marking, profile, &self.cfg.policy) {
            TagDecision::Drop => {
                stats.meter_drops += 1;
                return Ok(());
            }
            TagDecision::Tag(t) => t,
        };
        pkt.meta.service_tag = Some(service);
        let qid = self.cfg.queues.select(service, profile.resource_type)?;
        pkt.meta.queue_id = Some(qid);
        if self.egress.enqueue(pkt, qid)? == EnqueueResult::TailDropped {
            self.flows[fi].queue_drops += 1;
        }
        Ok(())
    }

    fn depart(&mut self, d: Departure) {
        let pkt = &d.packet;
        let dep = pkt.departure_time.expect("served packets carry a departure time");
        let fi = self.by_teid[&pkt.flow_id];
        let profile = self
            .cfg
            .profile(pkt.meta.five_qi.expect("classified"))
            .expect("profile exists");
        let verdict = pdb_account(pkt, profile);
        let w = self.cfg.measurement_window;

        let stats = &mut self.flows[fi];
        stats.delivered_pkts += 1;
        stats.delivered_bytes += pkt.size_bytes as u64;
        stats.max_delay_ns = stats.max_delay_ns.max(dep - pkt.arrival_time);
        let win = (dep / w) as usize;
        if stats.window_bytes.len() <= win {
            stats.window_bytes.resize(win + 1, 0);
        }
        stats.window_bytes[win] += pkt.size_bytes as u64;
        if verdict == PdbVerdict::Lost {
            stats.pdb_lost += 1;
        }
        if profile.resource_type == ResourceType::Gbr {
            let e = self.window.gbr.entry(pkt.flow_id).or_default();
            e.0 += 1;
            e.1 += (verdict == PdbVerdict::Lost) as u64;
        }

        let qm = self.window.queue_max.entry(d.queue_id).or_insert((d.tier, 0));
        qm.1 = qm.1.max(d.queue_delay);
        let tm = self.tier_max.entry(d.tier).or_default();
        *tm = (*tm).max(d.queue_delay);
        if pkt.meta.service_tag == Some(ServiceTag::DelayCritical) {
            self.delay_critical_max = self.delay_critical_max.max(d.queue_delay);
        }
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceRecord {
                pkt_id: pkt.pkt_id,
                flow_id: pkt.flow_id,
                queue_id: d.queue_id,
                tier: d.tier,
                arrival: pkt.arrival_time,
                start: d.start,
                departure: dep,
            });
        }
    }

    fn run(&mut self) -> Result<(), EngineError> {
        let mut pending = self.gen.next();
        loop {
            // Arrivals at an instant are processed before a dequeue at it.
            let dequeue_at = (!self.egress.is_empty())
                .then(|| self.egress.link().busy_until().max(self.clock));
            match (&pending, dequeue_at) {
                (None, None) => break,
                (Some(p), at) if at.is_none_or(|t| p.record.arrival_time <= t) => {
                    let p = pending.take().expect("matched Some");
                    self.clock = p.record.arrival_time;
                    self.close_windows_until(self.clock);
                    self.arrive(p.record, p.flow_index)?;
                    pending = self.gen.next();
                }
                (_, Some(t)) => {
                    self.clock = t;
                    self.close_windows_until(t);
                    let d = self.egress.dequeue_next(t).expect("link free and backlog present");
                    self.depart(d);
                }
                (Some(_), None) => unreachable!(),
            }
            self.events += 1;
        }
        let end = self.egress.link().busy_until().max(self.clock);
        self.close_windows_until(end);
        self.close_window();
        self.clock = end;
        Ok(())
    }
}

pub fn run(cfg: &ScenarioConfig) -> Result<RunMetrics, EngineError> {
    run_with(cfg, EngineOptions::default())
}

pub fn run_with(cfg: &ScenarioConfig, options: EngineOptions) -> Result<RunMetrics, EngineError> {
    let started = Instant::now();
    cfg.validate()?;
    let inputs = analytic_inputs(cfg);
    let report = analyze(&inputs)?;
    if !report.admission.is_admit() {
        info!(scenario = %cfg.name, "committed rates exceed the link; running anyway");
    }
    let d_h = drain_time(inputs.buffer_bytes, inputs.link_bps).unwrap_or(0);

    let gen = TrafficGenerator::new(cfg.flows.clone(), FlowAddresses::default(), cfg.seed)?;
    let mut flows = Vec::with_capacity(cfg.flows.len());
    let mut by_teid = HashMap::with_capacity(cfg.flows.len());
    for (i, f) in cfg.flows.iter().enumerate() {
        by_teid.insert(f.teid, i);
        flows.push(FlowMetrics {
            flow_id: f.teid,
            five_qi: f.five_qi,
            resource_type: cfg.profile(f.five_qi).map(|p| p.resource_type),
            offered_bps: f.rate_bps,
            start_ns: f.start_ns,
            stop_ns: f.stop_ns,
            ..Default::default()
        });
    }

    let mut engine = Engine {
        cfg,
        gen,
        meters: MeterMatrix::new(meter_config(cfg), cfg.meters.capacity)?,
        egress: EgressState::new(&cfg.queues, cfg.link.capacity_bps)?,
        flows,
        by_teid,
        clock: 0,
        events: 0,
        window: WindowState {
            index: 0,
            queue_max: BTreeMap::new(),
            gbr: BTreeMap::new(),
        },
        d_h,
        hook: options.hook,
        alerts: Vec::new(),
        deltas: Vec::new(),
        trace: options.record_trace.then(Vec::new),
        delay_critical_max: 0,
        tier_max: BTreeMap::new(),
    };
    engine.run()?;
    debug!(events = engine.events, "run finished");

    let queues: Vec<QueueMetrics> = engine
        .egress
        .queue_stats()
        .map(|(q, c)| QueueMetrics {
            queue_id: q.queue_id,
            tier: q.tier,
            enqueued: c.enqueued,
            tail_dropped: c.tail_dropped,
            dequeued: c.dequeued,
            max_occupancy: c.max_occupancy,
            max_delay_ns: c.max_delay,
            p50_delay_ns: c.percentile(50.0),
            p99_delay_ns: c.percentile(99.0),
        })
        .collect();
    let mut flows = engine.flows;
    flows.sort_by_key(|f| f.flow_id);
    let gbr_budget_violations = flows
        .iter()
        .filter(|f| f.resource_type == Some(ResourceType::Gbr) && f.within_budget() < GBR_BUDGET_SHARE)
        .map(|f| f.flow_id)
        .collect();
    let summary = RunSummary {
        scenario: cfg.name.clone(),
        mode: cfg.mode,
        seed: cfg.seed,
        link_bps: cfg.link.capacity_bps,
        flows: flows.len(),
        offered_load_ratio: cfg.offered_load_ratio(),
        admission: report.admission,
        analytics: report.outputs,
        arrivals: report.arrivals,
        packets_generated: flows.iter().map(|f| f.sent_pkts).sum(),
        packets_delivered: flows.iter().map(|f| f.delivered_pkts).sum(),
        meter_drops: flows.iter().map(|f| f.meter_drops).sum(),
        queue_drops: flows.iter().map(|f| f.queue_drops).sum(),
        tier_max_delay_ns: engine.tier_max.into_iter().collect(),
        delay_critical_max_ns: engine.delay_critical_max,
        gbr_budget_violations,
        alerts: engine.alerts,
        proposed_deltas: engine.deltas,
        windows: engine.window.index,
        events: engine.events,
        sim_end_ns: engine.clock,
    };
    Ok(RunMetrics {
        flows,
        queues,
        summary,
        wall_clock: started.elapsed(),
        trace: engine.trace,
    })
}
