//! Named scenarios reproducing the published experiments.
//!
//! All presets share 1500-byte frames, a 100 Kb / 500 Kb committed/peak
//! burst on per-flow meters and the default eight-queue map. `scale` divides
//! flow counts (rounded half up, at least one flow), the link rate and the
//! aggregate Non-GBR meters; per-flow rates are never scaled.
//!
//! Flow start times are laid out so that flows sharing a packet gap occupy
//! evenly spaced phases within it (in shuffled order) and join over a short
//! ramp. Without this every flow would emit its first packet at t = 0 and
//! every flow's full committed burst would land on the queues at once.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

use crate::classifier::{PortRange, PortRangeMap, ProfileTable};
use crate::config::{ConfigError, MeterSet, Mode, ScenarioConfig, DEFAULT_WINDOW};
use crate::egress::QueueMap;
use crate::meter::{MeterCapacity, MeterParams};
use crate::model::{
    kilobits_to_bytes, standard_profiles, volume_in, Bps, FiveQi, LinkConfig, Nanos, QosProfile,
    ResourceType, GBPS, KBPS, MBPS, NANOS_PER_MS, NANOS_PER_US,
};
use crate::tagging::PolicyConfig;
use crate::traffic::FlowSpec;

pub const PRESET_NAMES: [&str; 7] = [
    "functional-low",
    "functional-medium",
    "functional-high",
    "baseline-compare",
    "high-congestion",
    "appendix-small",
    "appendix-baseline",
];

/// One-line summary of a preset.
pub fn description(name: &str) -> Option<&'static str> {
    Some(match name {
        "functional-low" => "1000 flows at 10 Mbps over four 5QIs, 100% load",
        "functional-medium" => "2000 flows at 5 Mbps over four 5QIs, 100% load",
        "functional-high" => "4000 flows at 2.5 Mbps over four 5QIs, 100% load",
        "baseline-compare" => "2000 GBR flows, half at CIR 4 Mbps and half at PIR 7 Mbps",
        "high-congestion" => "1950 flows in eight groups, offered load 114% of the link",
        "appendix-small" => "19 high-rate flows over six 5QIs, Non-GBR overflow",
        "appendix-baseline" => "16 GBR flows, eight at CIR 500 Mbps and eight at PIR 1 Gbps",
        _ => return None,
    })
}

pub const FRAME_SIZE: u32 = 1500;
pub const DEFAULT_SEED: u64 = 1;
/// Per-flow committed and peak bursts: 100 Kb and 500 Kb.
pub const FLOW_CBS: u64 = kilobits_to_bytes(100);
pub const FLOW_PBS: u64 = kilobits_to_bytes(500);
/// Aggregate Non-GBR meters hold this much traffic at their peak rate.
const AGGREGATE_BURST_TIME: Nanos = 100 * NANOS_PER_MS;
/// Timing noise of the emulated traffic generator: each departure is
/// perturbed uniformly within this many nanoseconds of its nominal time.
pub const GENERATOR_TIMING_NOISE: Nanos = 5 * NANOS_PER_US;
const MAX_JITTER_FRACTION: f64 = 0.5;
const PORT_BASE: u16 = 20_000;
const PORT_SPAN: u16 = 1_000;

/// `n / scale`, rounded half up, never below one.
pub fn scale_count(n: u32, scale: u32) -> u32 {
    ((2 * n as u64 + scale as u64) / (2 * scale as u64)).max(1) as u32
}

struct Group {
    five_qi: FiveQi,
    count: u32,
    rate: Bps,
}

struct Blueprint {
    link: Bps,
    profiles: Vec<QosProfile>,
    flow_meters: Vec<(FiveQi, MeterParams)>,
    /// Aggregate Non-GBR meters: (5QI, peak rate, bucket bytes), unscaled.
    aggregates: Vec<(FiveQi, Bps, u64)>,
    groups: Vec<Group>,
    duration_ms: u64,
    ramp: Nanos,
}

fn flow_meter(cir: Bps, pir: Bps) -> MeterParams {
    MeterParams {
        cir_bps: cir,
        pir_bps: pir,
        cbs_bytes: FLOW_CBS,
        pbs_bytes: FLOW_PBS,
    }
}

fn standard(qi: u8) -> QosProfile {
    standard_profiles()
        .into_iter()
        .find(|p| p.five_qi == FiveQi(qi))
        .expect("standard row")
}

fn custom(qi: u8, rt: ResourceType, prio: u8, rates: Option<(Bps, Bps)>) -> QosProfile {
    use ResourceType::*;
    let (pdb, cn, per) = match rt {
        Gbr => (150, 20, 1e-3),
        GbrDc => (5, 2, 1e-4),
        NonGbr => (100, 20, 1e-6),
        NonGbrDc => (10, 2, 1e-6),
    };
    QosProfile {
        five_qi: FiveQi(qi),
        resource_type: rt,
        priority_level: prio,
        pdb_ms: pdb,
        cn_pdb_ms: cn,
        per,
        gfbr_bps: rates.map(|r| r.0),
        mfbr_bps: rates.map(|r| r.1),
        averaging_window_ms: rt.is_guaranteed().then_some(2000),
        mdbv_bytes: rt.is_delay_critical().then_some(FLOW_CBS),
    }
}

fn with_rates(mut p: QosProfile, gfbr: Bps, mfbr: Bps) -> QosProfile {
    p.gfbr_bps = Some(gfbr);
    p.mfbr_bps = Some(mfbr);
    p
}

fn functional(flows: u32, rate: Bps) -> Blueprint {
    let per_qi = flows / 4;
    let cir = rate / 2;
    let mut ngbr_star = with_rates(standard(80), cir, rate);
    ngbr_star.resource_type = ResourceType::NonGbrDc;
    ngbr_star.mdbv_bytes = Some(FLOW_CBS);
    Blueprint {
        link: 10 * GBPS,
        profiles: vec![
            with_rates(standard(2), cir, rate),
            with_rates(standard(86), cir, rate),
            standard(7),
            ngbr_star,
        ],
        flow_meters: [2, 86, 80]
            .iter()
            .map(|q| (FiveQi(*q), flow_meter(cir, rate)))
            .collect(),
        // Peak matched to the aggregate Non-GBR sending rate.
        aggregates: vec![(FiveQi(7), per_qi as u64 * rate, 0)],
        groups: [2, 86, 7, 80]
            .iter()
            .map(|q| Group {
                five_qi: FiveQi(*q),
                count: per_qi,
                rate,
            })
            .collect(),
        duration_ms: 2_000,
        ramp: 200 * NANOS_PER_MS,
    }
}

fn baseline_compare() -> Blueprint {
    let (cir, pir) = (4_000 * KBPS, 7_000 * KBPS);
    Blueprint {
        link: 10 * GBPS,
        profiles: vec![with_rates(standard(4), cir, pir), standard(7)],
        flow_meters: vec![(FiveQi(4), flow_meter(cir, pir))],
        aggregates: vec![],
        groups: vec![
            Group {
                five_qi: FiveQi(4),
                count: 1_000,
                rate: cir,
            },
            Group {
                five_qi: FiveQi(4),
                count: 1_000,
                rate: pir,
            },
        ],
        duration_ms: 2_000,
        ramp: 200 * NANOS_PER_MS,
    }
}

fn high_congestion() -> Blueprint {
    use ResourceType::*;
    let (cir, pir) = (2_500 * KBPS, 6_000 * KBPS);
    let g = |qi: u8, count: u32, rate_kbps: u64| Group {
        five_qi: FiveQi(qi),
        count,
        rate: rate_kbps * KBPS,
    };
    let ng_pir = 2_850 * MBPS;
    let ng_pbs = crate::model::megabits_to_bytes(285);
    Blueprint {
        link: 10 * GBPS,
        profiles: vec![
            custom(1, NonGbr, 50, None),
            custom(2, NonGbr, 5, None),
            custom(3, Gbr, 50, Some((cir, pir))),
            custom(4, Gbr, 5, Some((cir, pir))),
            custom(5, GbrDc, 25, Some((cir, pir))),
            custom(6, NonGbrDc, 60, Some((cir, pir))),
        ],
        flow_meters: (3..=6).map(|q| (FiveQi(q), flow_meter(cir, pir))).collect(),
        aggregates: vec![(FiveQi(1), ng_pir, ng_pbs), (FiveQi(2), ng_pir, ng_pbs)],
        groups: vec![
            g(1, 450, 6_000),
            g(2, 50, 4_000),
            g(3, 450, 6_000),
            g(3, 50, 1_500),
            g(4, 25, 6_000),
            g(4, 25, 5_000),
            g(5, 450, 6_000),
            g(6, 450, 6_000),
        ],
        duration_ms: 2_000,
        ramp: 200 * NANOS_PER_MS,
    }
}

fn appendix_small() -> Blueprint {
    use ResourceType::*;
    let (cir, pir) = (500 * MBPS, 1_000 * MBPS);
    let (dc_cir, dc_pir) = (250 * MBPS, 500 * MBPS);
    let g = |qi: u8, count: u32, rate_mbps: u64| Group {
        five_qi: FiveQi(qi),
        count,
        rate: rate_mbps * MBPS,
    };
    Blueprint {
        link: 10 * GBPS,
        profiles: vec![
            custom(0, Gbr, 50, Some((cir, pir))),
            custom(1, Gbr, 5, Some((cir, pir))),
            custom(2, GbrDc, 25, Some((cir, pir))),
            custom(3, NonGbr, 50, None),
            custom(4, NonGbr, 5, None),
            custom(5, NonGbrDc, 60, Some((dc_cir, dc_pir))),
        ],
        flow_meters: vec![
            (FiveQi(0), flow_meter(cir, pir)),
            (FiveQi(1), flow_meter(cir, pir)),
            (FiveQi(2), flow_meter(cir, pir)),
            (FiveQi(5), flow_meter(dc_cir, dc_pir)),
        ],
        aggregates: vec![
            (FiveQi(3), 2_500 * MBPS, 0),
            (FiveQi(4), 2_500 * MBPS, 0),
        ],
        // GBR between CIR and PIR, delay-critical at CIR, Non-GBR matching
        // the aggregate peak.
        groups: vec![
            g(0, 6, 625),
            g(1, 1, 625),
            g(2, 4, 500),
            g(3, 1, 700),
            g(3, 1, 800),
            g(3, 1, 1_000),
            g(4, 1, 250),
            g(5, 4, 250),
        ],
        duration_ms: 1_000,
        ramp: 10 * NANOS_PER_MS,
    }
}

fn appendix_baseline() -> Blueprint {
    let (cir, pir) = (500 * MBPS, 1_000 * MBPS);
    Blueprint {
        link: 10 * GBPS,
        profiles: vec![
            custom(0, ResourceType::Gbr, 50, Some((cir, pir))),
            standard(7),
        ],
        flow_meters: vec![(FiveQi(0), flow_meter(cir, pir))],
        aggregates: vec![],
        groups: vec![
            Group {
                five_qi: FiveQi(0),
                count: 8,
                rate: cir,
            },
            Group {
                five_qi: FiveQi(0),
                count: 8,
                rate: pir,
            },
        ],
        duration_ms: 1_000,
        ramp: 10 * NANOS_PER_MS,
    }
}

fn blueprint(name: &str) -> Option<Blueprint> {
    Some(match name {
        "functional-low" => functional(1_000, 10_000 * KBPS),
        "functional-medium" => functional(2_000, 5_000 * KBPS),
        "functional-high" => functional(4_000, 2_500 * KBPS),
        "baseline-compare" => baseline_compare(),
        "high-congestion" => high_congestion(),
        "appendix-small" => appendix_small(),
        "appendix-baseline" => appendix_baseline(),
        _ => return None,
    })
}

/// Assigns start times: evenly spaced shuffled phases inside the gap and a
/// shuffled whole-gap offset inside the ramp.
fn lay_out(flows: &mut [FlowSpec], ramp: Nanos, rng: &mut ChaCha8Rng) {
    let mut classes: BTreeMap<Nanos, Vec<usize>> = BTreeMap::new();
    for (i, f) in flows.iter().enumerate() {
        classes.entry(f.gap()).or_default().push(i);
    }
    for (gap, members) in classes {
        let n = members.len() as u64;
        let mut phase: Vec<u64> = (0..n).collect();
        let mut slot: Vec<u64> = (0..n).collect();
        phase.shuffle(rng);
        slot.shuffle(rng);
        let gaps_in_ramp = ramp / gap.max(1);
        for (k, &i) in members.iter().enumerate() {
            let offset = phase[k] * gap / n + slot[k] * gaps_in_ramp / n * gap;
            flows[i].start_ns = offset;
        }
    }
}

pub fn preset(name: &str, scale: u32) -> Result<ScenarioConfig, ConfigError> {
    preset_with_seed(name, scale, DEFAULT_SEED)
}

/// Builds a preset. `seed` drives the start-time layout and is stored as the
/// scenario seed.
pub fn preset_with_seed(name: &str, scale: u32, seed: u64) -> Result<ScenarioConfig, ConfigError> {
    let bp = blueprint(name).ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))?;
    if scale == 0 {
        return Err(ConfigError::Invalid("scale must be at least 1".into()));
    }
    let s = scale as u64;
    let duration = bp.duration_ms * NANOS_PER_MS;
    let link = LinkConfig::new(bp.link / s)?;

    let ranges: Vec<PortRange> = bp
        .profiles
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let lo = PORT_BASE + PORT_SPAN * i as u16;
            PortRange {
                lo,
                hi: lo + PORT_SPAN - 1,
                five_qi: p.five_qi,
            }
        })
        .collect();
    let profiles = ProfileTable::new(bp.profiles)?;
    let port_map = PortRangeMap::new(ranges, None, &profiles)?;

    let mut flows = Vec::new();
    let mut next_port: BTreeMap<FiveQi, u16> = BTreeMap::new();
    for g in &bp.groups {
        let range = port_map.range_of(g.five_qi).expect("every preset 5QI has a range");
        for _ in 0..scale_count(g.count, scale) {
            let off = next_port.entry(g.five_qi).or_insert(0);
            let port = range.lo + *off % PORT_SPAN;
            *off += 1;
            let mut flow = FlowSpec {
                teid: flows.len() as u32 + 1,
                five_qi: g.five_qi,
                inner_src_port: port,
                rate_bps: g.rate,
                frame_size: FRAME_SIZE,
                start_ns: 0,
                stop_ns: duration,
                jitter_fraction: 0.0,
            };
            flow.jitter_fraction =
                (GENERATOR_TIMING_NOISE as f64 / flow.gap() as f64).min(MAX_JITTER_FRACTION);
            flows.push(flow);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lay_out(&mut flows, bp.ramp, &mut rng);

    let mut params: BTreeMap<FiveQi, MeterParams> = bp.flow_meters.into_iter().collect();
    for (qi, pir, pbs) in bp.aggregates {
        let pir = pir / s;
        let pbs = if pbs == 0 {
            volume_in(pir, AGGREGATE_BURST_TIME)
        } else {
            pbs / s
        };
        params.insert(qi, MeterParams::aggregate(pir, pbs));
    }

    let cfg = ScenarioConfig {
        name: name.to_string(),
        queues: QueueMap::default_for_link(link.capacity_bps),
        link,
        profiles,
        port_map,
        meters: MeterSet {
            params,
            capacity: MeterCapacity::default(),
        },
        policy: PolicyConfig::default(),
        flows,
        duration,
        seed,
        mode: Mode::Flow,
        measurement_window: DEFAULT_WINDOW,
    };
    cfg.validate()?;
    Ok(cfg)
}
