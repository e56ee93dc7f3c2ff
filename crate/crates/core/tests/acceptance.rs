//! Acceptance suite: runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use num_rational::Ratio;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qosdp_core::analytics::{analyze, AnalyticInputs, FlowRates};
use qosdp_core::egress::{QueueConfig, QueueMap, QueueMapEntry, ResourceBinding, DEFAULT_QUANTUM};
use qosdp_core::meter::{MeterParams, MeterState};
use qosdp_core::{
    preset, run, Color, EgressState, FiveQi, Format, Mode, PacketRecord, QueueId, ResourceType,
    RunMetrics, ScenarioConfig, ServiceTag, GBPS, KBPS, NANOS_PER_MS, NANOS_PER_SEC,
};

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn verdict(ok: bool, detail: &str) -> Outcome {
    (ok, detail.to_string())
}

fn cached(cell: &'static OnceLock<RunMetrics>, name: &str, scale: u32, mode: Mode) -> &'static RunMetrics {
    cell.get_or_init(|| {
        let mut cfg = preset(name, scale).unwrap();
        cfg.mode = mode;
        run(&cfg).unwrap()
    })
}

fn baseline_compare_flow() -> &'static RunMetrics {
    static CELL: OnceLock<RunMetrics> = OnceLock::new();
    cached(&CELL, "baseline-compare", 10, Mode::Flow)
}

fn baseline_compare_baseline() -> &'static RunMetrics {
    static CELL: OnceLock<RunMetrics> = OnceLock::new();
    cached(&CELL, "baseline-compare", 10, Mode::Baseline)
}

fn functional_medium() -> &'static RunMetrics {
    static CELL: OnceLock<RunMetrics> = OnceLock::new();
    cached(&CELL, "functional-medium", 10, Mode::Flow)
}

fn appendix_small() -> &'static RunMetrics {
    static CELL: OnceLock<RunMetrics> = OnceLock::new();
    cached(&CELL, "appendix-small", 1, Mode::Flow)
}

fn high_congestion() -> &'static RunMetrics {
    static CELL: OnceLock<RunMetrics> = OnceLock::new();
    cached(&CELL, "high-congestion", 10, Mode::Flow)
}

fn rel_err(measured: f64, expected: f64) -> f64 {
    (measured - expected).abs() / expected
}

fn c1_guaranteed_rate_compliance() -> Outcome {
    let cir = 4_000 * KBPS;
    let flow = baseline_compare_flow();
    let below_cir = flow
        .flows
        .iter()
        .filter(|f| f.throughput_bps() < cir as f64 * 0.99)
        .count();
    let conforming: Vec<_> = flow.flows.iter().filter(|f| f.offered_bps <= cir).collect();
    let dirty = conforming
        .iter()
        .filter(|f| f.meter_red > 0 || f.queue_drops > 0)
        .count();

    let base = baseline_compare_baseline();
    let losses: Vec<f64> = base
        .flows
        .iter()
        .filter(|f| f.offered_bps <= cir)
        .map(|f| f.loss_rate())
        .collect();
    let lossy = losses.iter().filter(|l| **l > 0.0).count();
    let worst = losses.iter().cloned().fold(0.0, f64::max);

    let ok = below_cir == 0 && dirty == 0 && !conforming.is_empty() && lossy > 0 && worst > 0.05;
    verdict(
        ok,
        &format!(
            "FLOW: {} flows, {below_cir} under CIR, {dirty}/{} conforming with red/drops; \
             BASELINE: {lossy}/{} conforming flows lossy, worst loss {:.2}%",
            flow.flows.len(),
            conforming.len(),
            losses.len(),
            worst * 100.0
        ),
    )
}

fn c2_isolation_under_full_load() -> Outcome {
    let m = functional_medium();
    let mut worst = 0.0f64;
    let mut protected_loss = 0u64;
    let mut ngbr_loss = 0u64;
    for f in &m.flows {
        let lost = f.meter_drops + f.queue_drops;
        if f.resource_type == Some(ResourceType::NonGbr) {
            ngbr_loss += lost;
            continue;
        }
        protected_loss += lost;
        worst = worst.max(rel_err(f.throughput_bps(), f.offered_bps as f64));
    }
    let ok = worst <= 0.01 && protected_loss == 0;
    verdict(
        ok,
        &format!(
            "worst GBR/GBR*/Non-GBR* rate error {:.3}%, their lost packets {protected_loss}, \
             Non-GBR lost packets {ngbr_loss}",
            worst * 100.0
        ),
    )
}

/// Per-queue bps offered to each tier, derived from the configuration alone:
/// meter splits of CBR rates plus the tagging and queue maps.
fn offered_per_queue(cfg: &ScenarioConfig) -> BTreeMap<QueueId, f64> {
    let mut out: BTreeMap<QueueId, f64> = BTreeMap::new();
    let mut ng_sum: BTreeMap<FiveQi, f64> = BTreeMap::new();
    let mut add = |tag: ServiceTag, rt: ResourceType, bps: f64| {
        if bps > 0.0 {
            *out.entry(cfg.queues.select(tag, rt).unwrap()).or_default() += bps;
        }
    };
    for f in &cfg.flows {
        let p = cfg.profile(f.five_qi).unwrap();
        let m = cfg.meters.params[&f.five_qi];
        let rate = f.rate_bps as f64;
        let prio = cfg.policy.is_prioritized(p.priority_level);
        if p.resource_type.is_guaranteed() {
            let green = rate.min(m.cir_bps as f64);
            let yellow = rate.min(m.pir_bps as f64) - green;
            let green_tag = if p.resource_type.is_delay_critical() {
                ServiceTag::DelayCritical
            } else {
                ServiceTag::Dedicated
            };
            add(green_tag, p.resource_type, green);
            let tag = if prio { ServiceTag::Prioritized } else { ServiceTag::Shared };
            add(tag, p.resource_type, yellow);
        } else {
            *ng_sum.entry(f.five_qi).or_default() += rate;
        }
    }
    for (qi, sum) in ng_sum {
        let p = cfg.profile(qi).unwrap();
        let pir = cfg.meters.params[&qi].pir_bps as f64;
        let tag = if cfg.policy.is_prioritized(p.priority_level) {
            ServiceTag::Prioritized
        } else {
            ServiceTag::Shared
        };
        add(tag, p.resource_type, sum.min(pir));
    }
    out
}

/// Max-min fair split of `capacity` among equal-quantum queues.
fn water_fill(capacity: f64, demands: &BTreeMap<QueueId, f64>) -> BTreeMap<QueueId, f64> {
    let mut served = BTreeMap::new();
    let mut left: Vec<(QueueId, f64)> = demands.iter().map(|(q, d)| (*q, *d)).collect();
    left.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let mut cap = capacity;
    let mut n = left.len();
    for (q, d) in left {
        let share = cap / n as f64;
        let s = d.min(share);
        served.insert(q, s);
        cap -= s;
        n -= 1;
    }
    served
}

fn c3_nongbr_fairness() -> Outcome {
    let cfg = preset("appendix-small", 1).unwrap();
    let offered = offered_per_queue(&cfg);
    let tier = |q: &QueueId| cfg.queues.queue(*q).unwrap().tier;
    let low = *offered.keys().map(tier).collect::<Vec<_>>().iter().max().unwrap();
    let above: f64 = offered.iter().filter(|(q, _)| tier(q) < low).map(|(_, b)| b).sum();
    let low_demand: BTreeMap<QueueId, f64> = offered
        .iter()
        .filter(|(q, _)| tier(q) == low)
        .map(|(q, b)| (*q, *b))
        .collect();
    let served = water_fill(cfg.link.capacity_bps as f64 - above, &low_demand);
    let shared_ng = cfg.queues.select(ServiceTag::Shared, ResourceType::NonGbr).unwrap();
    let expected = (low_demand[&shared_ng] - served[&shared_ng]) / low_demand[&shared_ng];

    let m = appendix_small();
    let losses: Vec<f64> = m
        .flows
        .iter()
        .filter(|f| {
            f.resource_type == Some(ResourceType::NonGbr)
                && !cfg
                    .policy
                    .is_prioritized(cfg.profile(f.five_qi).unwrap().priority_level)
        })
        .map(|f| f.loss_rate())
        .collect();
    let max = losses.iter().cloned().fold(f64::MIN, f64::max);
    let min = losses.iter().cloned().fold(f64::MAX, f64::min);
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    let ok = losses.len() >= 2 && max - min <= 0.005 && (mean - expected).abs() <= 0.01;
    verdict(
        ok,
        &format!(
            "{} shared Non-GBR flows, loss spread {:.3} pp, mean {:.3}% vs analytic {:.3}%",
            losses.len(),
            (max - min) * 100.0,
            mean * 100.0,
            expected * 100.0
        ),
    )
}

fn c4_high_congestion_prioritization() -> Outcome {
    let m = high_congestion();
    let by = |qi: u8, rate_kbps: u64| -> Vec<_> {
        m.flows
            .iter()
            .filter(|f| f.five_qi == FiveQi(qi) && f.offered_bps == rate_kbps * KBPS)
            .collect()
    };
    let prio_ng = by(2, 4_000);
    let prio_ng_ok = prio_ng
        .iter()
        .all(|f| f.loss_rate() < 0.001 && rel_err(f.throughput_bps(), 4e6) <= 0.01);
    let prio_gbr: Vec<_> = by(4, 6_000).into_iter().chain(by(4, 5_000)).collect();
    let prio_gbr_ok = prio_gbr
        .iter()
        .all(|f| rel_err(f.throughput_bps(), f.offered_bps as f64) <= 0.01);
    let below = by(3, 1_500);
    let below_ok = below
        .iter()
        .all(|f| f.meter_drops + f.queue_drops == 0 && rel_err(f.throughput_bps(), 1.5e6) <= 0.01);
    let background = by(1, 6_000);
    let bg_mean =
        background.iter().map(|f| f.throughput_bps()).sum::<f64>() / background.len() as f64;
    let ok = !prio_ng.is_empty()
        && !prio_gbr.is_empty()
        && !below.is_empty()
        && !background.is_empty()
        && prio_ng_ok
        && prio_gbr_ok
        && below_ok
        && bg_mean < 6e6;
    verdict(
        ok,
        &format!(
            "offered/capacity {:.3}; prioritized Non-GBR ok={prio_ng_ok} ({}), prioritized GBR \
             ok={prio_gbr_ok} ({}), below-CIR GBR ok={below_ok} ({}), background mean {:.0} bps",
            m.summary.offered_load_ratio,
            prio_ng.len(),
            prio_gbr.len(),
            below.len(),
            bg_mean
        ),
    )
}

fn c5_delay_bounds() -> Outcome {
    let runs = [
        ("baseline-compare/FLOW", baseline_compare_flow()),
        ("baseline-compare/BASELINE", baseline_compare_baseline()),
        ("functional-medium", functional_medium()),
        ("appendix-small", appendix_small()),
        ("high-congestion", high_congestion()),
    ];
    let mut ok = true;
    let mut details = Vec::new();
    for (name, m) in runs {
        let a = m.summary.analytics.expect("admitted");
        let tier = |t: u8| {
            m.summary
                .tier_max_delay_ns
                .iter()
                .find(|(l, _)| *l == t)
                .map_or(0, |(_, d)| *d)
        };
        let (t0, t1, dc) = (tier(0), tier(1), m.summary.delay_critical_max_ns);
        let run_ok = a.d_h == 100_000
            && a.d_s == 200_000
            && t0 <= a.d_h
            && t1 <= a.d_s
            && dc < NANOS_PER_MS;
        ok &= run_ok;
        details.push(format!("{name}: t0 {t0} ns, t1 {t1} ns, dc {dc} ns"));
    }
    verdict(ok, &details.join("; "))
}

/// Exact rational two-rate marker, written from the token-bucket definition
/// with bytes as the unit.
struct RationalMarker {
    cir: i128,
    pir: i128,
    cbs: Ratio<i128>,
    pbs: Ratio<i128>,
    tc: Ratio<i128>,
    tp: Ratio<i128>,
    last: i128,
}

impl RationalMarker {
    fn new(p: MeterParams) -> Self {
        let cbs = Ratio::from_integer(p.cbs_bytes as i128);
        let pbs = Ratio::from_integer(p.pbs_bytes as i128);
        RationalMarker {
            cir: p.cir_bps as i128,
            pir: p.pir_bps as i128,
            cbs,
            pbs,
            tc: cbs,
            tp: pbs,
            last: 0,
        }
    }

    fn mark(&mut self, now: u64, size: u32) -> Color {
        let dt = now as i128 - self.last;
        if dt > 0 {
            let per_byte_ns = Ratio::from_integer(8 * NANOS_PER_SEC as i128);
            self.tc = (self.tc + Ratio::from_integer(self.cir * dt) / per_byte_ns).min(self.cbs);
            self.tp = (self.tp + Ratio::from_integer(self.pir * dt) / per_byte_ns).min(self.pbs);
            self.last = now as i128;
        }
        let b = Ratio::from_integer(size as i128);
        if self.tp < b {
            Color::Red
        } else if self.tc < b {
            self.tp -= b;
            Color::Yellow
        } else {
            self.tc -= b;
            self.tp -= b;
            Color::Green
        }
    }
}

fn c6_meter_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cases = 100_000;
    let mut packets = 0u64;
    let mut mismatch = None;
    for case in 0..cases {
        let cir = rng.gen_range(1..=10_000_000_000u64);
        let pir = rng.gen_range(cir..=cir.saturating_mul(4).min(40_000_000_000));
        let cbs = rng.gen_range(1..=200_000u64);
        let pbs = rng.gen_range(cbs..=cbs * 4);
        let params = MeterParams {
            cir_bps: cir,
            pir_bps: pir,
            cbs_bytes: cbs,
            pbs_bytes: pbs,
        };
        let mut meter = MeterState::new(params);
        let mut oracle = RationalMarker::new(params);
        let mut now = 0u64;
        for i in 0..rng.gen_range(1..=24) {
            now += rng.gen_range(0..=2_000_000u64);
            let size = rng.gen_range(64..=(cbs.min(9_000) as u32).max(64));
            let got = meter.trtcm_mark(now, size);
            let want = oracle.mark(now, size);
            packets += 1;
            if got != want && mismatch.is_none() {
                mismatch = Some((case, i, got, want));
            }
        }
    }

    let mut m = MeterState::new(MeterParams {
        cir_bps: 1_000_000,
        pir_bps: 2_000_000,
        cbs_bytes: 1_500,
        pbs_bytes: 1_500,
    });
    let n = 10_000u64;
    let mut counts = [0u64; 3];
    for k in 0..n {
        counts[m.trtcm_mark(k * 3 * NANOS_PER_MS, 1_500) as usize] += 1;
    }
    let share = |c: u64| c as f64 / n as f64 * 100.0;
    let (g, y, r) = (share(counts[0]), share(counts[1]), share(counts[2]));
    let steady_ok = (g - 25.0).abs() <= 2.0 && (y - 25.0).abs() <= 2.0 && (r - 50.0).abs() <= 2.0;
    verdict(
        mismatch.is_none() && steady_ok,
        &format!(
            "{cases} cases / {packets} packets, first mismatch {mismatch:?}; \
             steady state {g:.2}/{y:.2}/{r:.2} % green/yellow/red"
        ),
    )
}

fn inputs_strategy() -> impl Strategy<Value = AnalyticInputs> {
    (
        1u64..=100 * GBPS,
        prop::collection::vec((0u64..=2 * GBPS, 0u64..=2 * GBPS, any::<bool>()), 0..12),
        0u64..=50 * GBPS,
        0.0f64..=1.0,
        1u64..=50_000_000,
    )
        .prop_map(|(link_bps, flows, pir_ng_bps, p, buffer_bytes)| AnalyticInputs {
            link_bps,
            flows: flows
                .into_iter()
                .map(|(a, b, prioritized)| FlowRates {
                    cir_bps: a.min(b),
                    pir_bps: a.max(b),
                    prioritized,
                })
                .collect(),
            pir_ng_bps,
            p,
            buffer_bytes,
        })
}

fn c7_analytic_identities() -> Outcome {
    let mut config = ProptestConfig::with_cases(10_000);
    config.failure_persistence = None;
    let mut runner = proptest::test_runner::TestRunner::new(config);
    let result = runner.run(&(inputs_strategy(), 1u64..=10 * GBPS, 1u64..=1_000_000), |(x, extra, more_buf)| {
        let r = analyze(&x).unwrap();
        let committed: u64 = x.flows.iter().map(|f| f.cir_bps).sum();
        prop_assert_eq!(!r.admission.is_admit(), committed > x.link_bps);
        let Some(o) = r.outputs else {
            prop_assert!(committed > x.link_bps);
            return Ok(());
        };
        prop_assert_eq!(o.r_h, committed);
        prop_assert_eq!(o.delta_r, x.link_bps as i64 - o.r_h as i64);
        prop_assert_eq!(o.r_l as i64, o.delta_r - o.r_m as i64);
        prop_assert!(o.r_m as i64 <= o.delta_r);
        prop_assert!(o.d_h <= o.d_s);
        if let Some(d_m) = o.d_m {
            prop_assert!(d_m >= o.d_h);
        }
        if let Some(d_l) = o.d_l {
            prop_assert!(d_l >= o.d_h);
        }

        // More link: no service rate shrinks, no bound grows.
        let mut wider = x.clone();
        wider.link_bps += extra;
        let w = analyze(&wider).unwrap().outputs.unwrap();
        prop_assert!(w.delta_r > o.delta_r);
        prop_assert!(w.r_m >= o.r_m && w.r_l >= o.r_l);
        prop_assert!(w.d_h <= o.d_h);
        if let (Some(a), Some(b)) = (w.d_m, o.d_m) {
            prop_assert!(a <= b);
        }
        if let (Some(a), Some(b)) = (w.d_l, o.d_l) {
            prop_assert!(a <= b);
        }

        // More buffer: every bound grows or stays.
        let mut deeper = x.clone();
        deeper.buffer_bytes += more_buf;
        let d = analyze(&deeper).unwrap().outputs.unwrap();
        prop_assert!(d.d_h >= o.d_h && d.d_s >= o.d_s);
        if let (Some(a), Some(b)) = (d.d_m, o.d_m) {
            prop_assert!(a >= b);
        }

        // One more committed flow: r_h grows by its CIR, the residual shrinks.
        let mut busier = x.clone();
        busier.flows.push(FlowRates {
            cir_bps: extra,
            pir_bps: extra,
            prioritized: false,
        });
        let b = analyze(&busier).unwrap();
        match b.outputs {
            Some(b) => {
                prop_assert_eq!(b.r_h, o.r_h + extra);
                prop_assert!(b.delta_r < o.delta_r);
                prop_assert!(b.r_m <= o.r_m);
            }
            None => prop_assert!(committed + extra > x.link_bps),
        }
        Ok(())
    });
    verdict(
        result.is_ok(),
        &format!("10000 random instances: {:?}", result.err()),
    )
}

fn two_queue_map(tier_b: u8, link: u64) -> QueueMap {
    let q = |id: u8, tier: u8| QueueConfig {
        queue_id: QueueId(id),
        tier,
        resource_binding: ResourceBinding::Any,
        buffer_bytes: link / 8,
        dwrr_quantum: DEFAULT_QUANTUM,
        reserved_rate_bps: None,
    };
    QueueMap {
        queues: vec![q(1, 0), q(2, tier_b)],
        map: vec![
            QueueMapEntry {
                tag: ServiceTag::DelayCritical,
                resource_type: None,
                queue_id: QueueId(1),
            },
            QueueMapEntry {
                tag: ServiceTag::Shared,
                resource_type: None,
                queue_id: QueueId(2),
            },
        ],
    }
}

fn packet(id: u64, size: u32, at: u64) -> PacketRecord {
    let mut p = PacketRecord::new(id, id as u32, size, at);
    p.meta.ingress_ts = Some(at);
    p
}

fn c8_dwrr_and_strict_priority() -> Outcome {
    let link = GBPS;
    let frame = DEFAULT_QUANTUM as u32;
    let horizon = 200 * NANOS_PER_MS;
    let window = 10 * NANOS_PER_MS;

    // Both queues in one tier, kept backlogged.
    let mut eg = EgressState::new(&two_queue_map(0, link), link).unwrap();
    let mut id = 0;
    for _ in 0..4 {
        for q in [1, 2] {
            id += 1;
            eg.enqueue(packet(id, frame, 0), QueueId(q)).unwrap();
        }
    }
    let mut served: Vec<(u64, u8)> = Vec::new();
    let mut now = 0;
    while now < horizon {
        let d = eg.dequeue_next(now).unwrap();
        served.push((d.start, d.queue_id.0));
        id += 1;
        eg.enqueue(packet(id, frame, now), d.queue_id).unwrap();
        now = eg.link().busy_until();
    }
    // Cumulative byte difference at every service instant; any window's
    // difference is the change in this quantity across it.
    let mut diff = vec![(0u64, 0i64)];
    for &(t, q) in &served {
        let last = diff.last().unwrap().1;
        diff.push((t, last + if q == 1 { frame as i64 } else { -(frame as i64) }));
    }
    let mut worst_window = 0i64;
    let mut j = 0;
    for i in 0..diff.len() {
        while j + 1 < diff.len() && diff[j + 1].0 <= diff[i].0 + window {
            j += 1;
        }
        for k in i..=j {
            worst_window = worst_window.max((diff[k].1 - diff[i].1).abs());
        }
    }
    let fair_ok = worst_window <= DEFAULT_QUANTUM as i64;

    // Tier 0 arriving at exactly the link rate until 10 ms, tier 1 backlogged
    // from the start.
    let mut eg = EgressState::new(&two_queue_map(1, link), link).unwrap();
    let gap = frame as u64 * 8 * NANOS_PER_SEC / link;
    let stop = 10 * NANOS_PER_MS;
    let mut arrivals: Vec<u64> = (0..).map(|k| k * gap).take_while(|t| *t < stop).collect();
    arrivals.reverse();
    for k in 0..50 {
        eg.enqueue(packet(1_000_000 + k, frame, 0), QueueId(2)).unwrap();
    }
    let mut clock = 0;
    let mut early_tier1 = 0;
    let mut last_tier0_arrival = 0;
    while !(arrivals.is_empty() && eg.is_empty()) {
        let dq = (!eg.is_empty()).then(|| eg.link().busy_until().max(clock));
        match (arrivals.last().copied(), dq) {
            (Some(a), d) if d.is_none_or(|d| a <= d) => {
                arrivals.pop();
                clock = a;
                last_tier0_arrival = a;
                eg.enqueue(packet(a, frame, a), QueueId(1)).unwrap();
            }
            (_, Some(d)) => {
                clock = d;
                let dep = eg.dequeue_next(d).unwrap();
                if dep.tier == 1 && dep.start < last_tier0_arrival + gap {
                    early_tier1 += 1;
                }
            }
            _ => unreachable!(),
        }
    }
    let sp_ok = early_tier1 == 0 && last_tier0_arrival + gap >= stop;
    verdict(
        fair_ok && sp_ok,
        &format!(
            "worst 10 ms byte gap {worst_window} B (quantum {DEFAULT_QUANTUM}) over {} services; \
             tier-1 packets served before tier 0 stopped: {early_tier1}",
            served.len()
        ),
    )
}

fn c9_determinism() -> Outcome {
    let cfg = preset("high-congestion", 10).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut files = Vec::new();
    for d in &dirs {
        let m = run(&cfg).unwrap();
        files = m.write(d.path(), Format::Csv).unwrap();
    }
    let mut differing = Vec::new();
    for f in &files {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        if a != b {
            differing.push(f.clone());
        }
    }
    verdict(
        files.len() == 3 && differing.is_empty(),
        &format!("compared {files:?}, differing {differing:?}"),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("C1", c1_guaranteed_rate_compliance),
        ("C2", c2_isolation_under_full_load),
        ("C3", c3_nongbr_fairness),
        ("C4", c4_high_congestion_prioritization),
        ("C5", c5_delay_bounds),
        ("C6", c6_meter_oracle),
        ("C7", c7_analytic_identities),
        ("C8", c8_dwrr_and_strict_priority),
        ("C9", c9_determinism),
    ];
    let outcomes: Vec<Outcome> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria
            .iter()
            .map(|(_, f)| s.spawn(f))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join().unwrap_or_else(|e| {
                    let msg = e
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_default();
                    (false, format!("panicked: {msg}"))
                })
            })
            .collect()
    });
    let mut failed = 0;
    for ((id, _), (ok, detail)) in criteria.iter().zip(&outcomes) {
        println!("{id} {} {detail}", if *ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
