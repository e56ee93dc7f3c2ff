//! Scenario documents: the JSON file format and its validated, resolved form.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ClassifyError, PortRange, PortRangeMap, ProfileTable};
use crate::egress::{EgressError, QueueMap};
use crate::meter::{MeterCapacity, MeterError, MeterMatrix, MeterParams};
use crate::model::{
    Color, FiveQi, LinkConfig, Marking, ModelError, Nanos, QosProfile, ResourceType,
    NANOS_PER_MS,
};
use crate::presets;
use crate::tagging::{tag, PolicyConfig, TagDecision};
use crate::traffic::{FlowSpec, TrafficError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Json(#[from] serde_json::Error),
    #[error("scenario is missing `{0}`")]
    Missing(&'static str),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Meter(#[from] MeterError),
    #[error(transparent)]
    Egress(#[from] EgressError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    /// Per-flow meters for guaranteed 5QIs.
    #[default]
    #[serde(alias = "flow")]
    Flow,
    /// One shared meter per guaranteed 5QI.
    #[serde(alias = "baseline")]
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortMapSection {
    pub ranges: Vec<PortRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_five_qi: Option<FiveQi>,
}

/// One meter configuration. Missing fields fall back to the profile's
/// GFBR/MFBR/MDBV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeterEntry {
    pub five_qi: FiveQi,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cir_bps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pir_bps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cbs_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pbs_bytes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetersSection {
    pub entries: Vec<MeterEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<MeterCapacity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowEntry {
    pub teid: u32,
    pub five_qi: FiveQi,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_src_port: Option<u16>,
    pub rate_bps: u64,
    pub frame_size: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_ns: Option<Nanos>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_ns: Option<Nanos>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jitter_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PresetRef {
    Name(String),
    Scaled {
        name: String,
        #[serde(default = "one")]
        scale: u32,
    },
}

fn one() -> u32 {
    1
}

impl PresetRef {
    pub fn name(&self) -> &str {
        match self {
            PresetRef::Name(n) | PresetRef::Scaled { name: n, .. } => n,
        }
    }

    pub fn scale(&self) -> u32 {
        match self {
            PresetRef::Name(_) => 1,
            PresetRef::Scaled { scale, .. } => *scale,
        }
    }
}

/// The on-disk scenario document. With `preset` set, every other section is
/// optional and replaces the preset's version when present.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    /// Label carried into the run summary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link: Option<LinkConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profiles: Option<Vec<QosProfile>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub port_map: Option<PortMapSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meters: Option<MetersSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queues: Option<QueueMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flows: Option<Vec<FlowEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<PresetRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement_window_ms: Option<u64>,
}

pub const DEFAULT_WINDOW: Nanos = 100 * NANOS_PER_MS;

/// Meter parameters per 5QI plus the matrix limits.
#[derive(Debug, Clone, PartialEq)]
pub struct MeterSet {
    pub params: BTreeMap<FiveQi, MeterParams>,
    pub capacity: MeterCapacity,
}

/// A fully resolved scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub link: LinkConfig,
    pub profiles: ProfileTable,
    pub port_map: PortRangeMap,
    pub meters: MeterSet,
    pub policy: PolicyConfig,
    pub queues: QueueMap,
    pub flows: Vec<FlowSpec>,
    pub duration: Nanos,
    pub seed: u64,
    pub mode: Mode,
    pub measurement_window: Nanos,
}

fn resolve_meter(entry: &MeterEntry, profile: &QosProfile) -> Result<MeterParams, ConfigError> {
    let qi = entry.five_qi;
    let need = |v: Option<u64>, what: &str| {
        v.ok_or_else(|| invalid(format!("meter for 5QI {qi} needs {what}")))
    };
    if profile.resource_type == ResourceType::NonGbr {
        let pir = need(entry.pir_bps, "pir_bps")?;
        let pbs = need(entry.pbs_bytes, "pbs_bytes")?;
        return Ok(MeterParams::aggregate(pir, pbs));
    }
    let cir = need(entry.cir_bps.or(profile.gfbr_bps), "cir_bps")?;
    let pir = need(entry.pir_bps.or(profile.mfbr_bps), "pir_bps")?;
    let cbs = need(entry.cbs_bytes.or(profile.mdbv_bytes), "cbs_bytes")?;
    let pbs = need(entry.pbs_bytes.or(entry.cbs_bytes).or(profile.mdbv_bytes), "pbs_bytes")?;
    Ok(MeterParams {
        cir_bps: cir,
        pir_bps: pir,
        cbs_bytes: cbs,
        pbs_bytes: pbs,
    })
}

/// First port not covered by any range; it classifies to the default 5QI.
fn default_port(map: &PortRangeMap) -> Option<u16> {
    (1024..=u16::MAX).find(|p| map.entries().iter().all(|r| !r.contains(*p)))
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Layers explicit sections over the preset (if any) and validates.
    pub fn resolve(self) -> Result<ScenarioConfig, ConfigError> {
        let base = match &self.preset {
            Some(p) => {
                let seed = self.seed.unwrap_or(presets::DEFAULT_SEED);
                Some(presets::preset_with_seed(p.name(), p.scale(), seed)?.to_file())
            }
            None => None,
        };
        let name = self.name.clone().unwrap_or_else(|| {
            self.preset
                .as_ref()
                .map_or_else(|| "custom".to_string(), |p| p.name().to_string())
        });
        let b = base.unwrap_or_default();
        let merged = ScenarioFile {
            name: None,
            link: self.link.or(b.link),
            profiles: self.profiles.or(b.profiles),
            port_map: self.port_map.or(b.port_map),
            meters: self.meters.or(b.meters),
            policy: self.policy.or(b.policy),
            queues: self.queues.or(b.queues),
            flows: self.flows.or(b.flows),
            preset: None,
            duration_ms: self.duration_ms.or(b.duration_ms),
            seed: self.seed.or(b.seed),
            mode: self.mode.or(b.mode),
            measurement_window_ms: self.measurement_window_ms.or(b.measurement_window_ms),
        };
        merged.build(name)
    }

    fn build(self, name: String) -> Result<ScenarioConfig, ConfigError> {
        let link = self.link.ok_or(ConfigError::Missing("link"))?;
        link.validate()?;
        let profiles = ProfileTable::new(self.profiles.ok_or(ConfigError::Missing("profiles"))?)?;
        let pm = self.port_map.ok_or(ConfigError::Missing("port_map"))?;
        let port_map = PortRangeMap::new(pm.ranges, pm.default_five_qi, &profiles)?;
        let duration_ms = self.duration_ms.ok_or(ConfigError::Missing("duration_ms"))?;
        let duration = duration_ms * NANOS_PER_MS;
        let flows_in = self.flows.ok_or(ConfigError::Missing("flows"))?;

        let meters_in = self.meters.unwrap_or(MetersSection {
            entries: vec![],
            capacity: None,
        });
        let mut params = BTreeMap::new();
        for e in &meters_in.entries {
            let profile = profiles
                .get(e.five_qi)
                .ok_or(ClassifyError::MissingProfile(e.five_qi))?;
            if params.insert(e.five_qi, resolve_meter(e, profile)?).is_some() {
                return Err(invalid(format!("two meter entries for 5QI {}", e.five_qi)));
            }
        }

        let mut next_port: BTreeMap<FiveQi, u16> = BTreeMap::new();
        let mut flows = Vec::with_capacity(flows_in.len());
        for f in flows_in {
            let port = match f.inner_src_port {
                Some(p) => p,
                None => match port_map.range_of(f.five_qi) {
                    Some(r) => {
                        let off = next_port.entry(f.five_qi).or_insert(0);
                        let span = r.hi - r.lo + 1;
                        let p = r.lo + *off % span;
                        *off = off.wrapping_add(1) % span;
                        p
                    }
                    None if f.five_qi == port_map.default_five_qi() => default_port(&port_map)
                        .ok_or_else(|| invalid("no free port for the default 5QI"))?,
                    None => {
                        return Err(invalid(format!(
                            "flow {}: 5QI {} has no port range",
                            f.teid, f.five_qi
                        )))
                    }
                },
            };
            flows.push(FlowSpec {
                teid: f.teid,
                five_qi: f.five_qi,
                inner_src_port: port,
                rate_bps: f.rate_bps,
                frame_size: f.frame_size,
                start_ns: f.start_ns.unwrap_or(0),
                stop_ns: f.stop_ns.unwrap_or(duration),
                jitter_fraction: f.jitter_fraction.unwrap_or(0.0),
            });
        }

        // Profiles with full rate information need no explicit meter entry.
        for f in &flows {
            if params.contains_key(&f.five_qi) {
                continue;
            }
            let profile = profiles
                .get(f.five_qi)
                .ok_or(ClassifyError::MissingProfile(f.five_qi))?;
            let entry = MeterEntry {
                five_qi: f.five_qi,
                cir_bps: None,
                pir_bps: None,
                cbs_bytes: None,
                pbs_bytes: None,
            };
            params.insert(f.five_qi, resolve_meter(&entry, profile)?);
        }

        let cfg = ScenarioConfig {
            name,
            queues: self.queues.unwrap_or_else(|| QueueMap::default_for_link(link.capacity_bps)),
            link,
            profiles,
            port_map,
            meters: MeterSet {
                params,
                capacity: meters_in.capacity.unwrap_or_default(),
            },
            policy: self.policy.unwrap_or_default(),
            flows,
            duration,
            seed: self.seed.unwrap_or(0),
            mode: self.mode.unwrap_or_default(),
            measurement_window: self.measurement_window_ms.map_or(DEFAULT_WINDOW, |w| w * NANOS_PER_MS),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        ScenarioFile::from_json(text)?.resolve()
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        ScenarioFile::load(path)?.resolve()
    }

    /// Cross-section consistency checks.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.link.validate()?;
        if self.duration == 0 {
            return Err(invalid("duration must be positive"));
        }
        if self.measurement_window == 0 {
            return Err(invalid("measurement window must be positive"));
        }
        self.policy.validate().map_err(ConfigError::Invalid)?;
        self.queues.validate()?;
        MeterMatrix::new(self.meter_config(), self.meters.capacity)?;
        let mut teids = std::collections::BTreeSet::new();
        for f in &self.flows {
            f.validate()?;
            if !teids.insert(f.teid) {
                return Err(TrafficError::DuplicateTeid(f.teid).into());
            }
            if f.stop_ns > self.duration {
                return Err(invalid(format!("flow {} stops after the scenario ends", f.teid)));
            }
            let profile = self
                .profiles
                .get(f.five_qi)
                .ok_or(ClassifyError::MissingProfile(f.five_qi))?;
            let classified = self.port_map.lookup(f.inner_src_port);
            if classified != f.five_qi {
                return Err(invalid(format!(
                    "flow {}: port {} classifies to 5QI {}, not {}",
                    f.teid, f.inner_src_port, classified, f.five_qi
                )));
            }
            if !self.meters.params.contains_key(&f.five_qi) {
                return Err(MeterError::UnknownFiveQi(f.five_qi).into());
            }
            self.check_queue_coverage(profile)?;
        }
        Ok(())
    }

    fn check_queue_coverage(&self, profile: &QosProfile) -> Result<(), ConfigError> {
        let markings = [
            Marking::Color(Color::Green),
            Marking::Color(Color::Yellow),
            Marking::Aggregate(crate::model::Conformance::Conform),
        ];
        for m in markings {
            if let TagDecision::Tag(t) = tag(m, profile, &self.policy) {
                self.queues.select(t, profile.resource_type)?;
            }
        }
        Ok(())
    }

    /// Meter configuration triples for [`MeterMatrix::new`].
    pub fn meter_config(&self) -> Vec<(FiveQi, ResourceType, MeterParams)> {
        self.meters
            .params
            .iter()
            .filter_map(|(qi, p)| self.profiles.get(*qi).map(|pr| (*qi, pr.resource_type, *p)))
            .collect()
    }

    pub fn profile(&self, five_qi: FiveQi) -> Option<&QosProfile> {
        self.profiles.get(five_qi)
    }

    /// Sum of nominal flow rates over the link capacity.
    pub fn offered_load_ratio(&self) -> f64 {
        let offered: u128 = self.flows.iter().map(|f| f.rate_bps as u128).sum();
        offered as f64 / self.link.capacity_bps as f64
    }

    /// Fully explicit file form; resolving it yields `self` again.
    pub fn to_file(&self) -> ScenarioFile {
        ScenarioFile {
            name: Some(self.name.clone()),
            link: Some(self.link),
            profiles: Some(self.profiles.iter().cloned().collect()),
            port_map: Some(PortMapSection {
                ranges: self.port_map.entries().to_vec(),
                default_five_qi: Some(self.port_map.default_five_qi()),
            }),
            meters: Some(MetersSection {
                entries: self
                    .meters
                    .params
                    .iter()
                    .map(|(qi, p)| MeterEntry {
                        five_qi: *qi,
                        cir_bps: Some(p.cir_bps),
                        pir_bps: Some(p.pir_bps),
                        cbs_bytes: Some(p.cbs_bytes),
                        pbs_bytes: Some(p.pbs_bytes),
                    })
                    .collect(),
                capacity: Some(self.meters.capacity),
            }),
            policy: Some(self.policy.clone()),
            queues: Some(self.queues.clone()),
            flows: Some(
                self.flows
                    .iter()
                    .map(|f| FlowEntry {
                        teid: f.teid,
                        five_qi: f.five_qi,
                        inner_src_port: Some(f.inner_src_port),
                        rate_bps: f.rate_bps,
                        frame_size: f.frame_size,
                        start_ns: Some(f.start_ns),
                        stop_ns: Some(f.stop_ns),
                        jitter_fraction: Some(f.jitter_fraction),
                    })
                    .collect(),
            ),
            preset: None,
            duration_ms: Some(self.duration / NANOS_PER_MS),
            seed: Some(self.seed),
            mode: Some(self.mode),
            measurement_window_ms: Some(self.measurement_window / NANOS_PER_MS),
        }
    }
}
