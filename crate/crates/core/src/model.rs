//! Domain types shared by every pipeline stage.
//!
//! Simulation time is an integer count of nanoseconds since the start of a
//! run, rates are bits per second and volumes are bytes. Conversions between
//! them are always explicit at the use site.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation time or duration in nanoseconds.
pub type Nanos = u64;
/// Rate in bits per second.
pub type Bps = u64;

pub const NANOS_PER_SEC: u64 = 1_000_000_000;
pub const NANOS_PER_MS: u64 = 1_000_000;
pub const NANOS_PER_US: u64 = 1_000;

pub const KBPS: Bps = 1_000;
pub const MBPS: Bps = 1_000_000;
pub const GBPS: Bps = 1_000_000_000;

/// Bytes in `kilobits` kb (1 kb = 1000 bits).
pub const fn kilobits_to_bytes(kilobits: u64) -> u64 {
    kilobits * 1_000 / 8
}

/// Bytes in `megabits` Mb (1 Mb = 10^6 bits).
pub const fn megabits_to_bytes(megabits: u64) -> u64 {
    megabits * 1_000_000 / 8
}

/// Time to serialise `bytes` at `rate`, rounded down to whole nanoseconds.
pub fn tx_time(bytes: u64, rate: Bps) -> Nanos {
    ((bytes as u128 * 8 * NANOS_PER_SEC as u128) / rate as u128) as Nanos
}

/// Volume (bytes) that `rate` carries in `dur`, rounded down.
pub fn volume_in(rate: Bps, dur: Nanos) -> u64 {
    ((rate as u128 * dur as u128) / (8 * NANOS_PER_SEC as u128)) as u64
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid profile for 5QI {five_qi}: {reason}")]
    InvalidProfile { five_qi: u8, reason: String },
    #[error("link capacity must be positive")]
    ZeroCapacity,
    #[error("unknown {kind} name `{name}`")]
    UnknownName { kind: &'static str, name: String },
}

/// 5G QoS Identifier.
#[derive(
    Debug, Default, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct FiveQi(pub u8);

impl fmt::Display for FiveQi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Egress queue identifier.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct QueueId(pub u8);

impl fmt::Display for QueueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q{}", self.0)
    }
}

/// Flow identity is the GTP-U TEID.
pub type FlowId = u32;

macro_rules! text_enum {
    ($name:ident, $kind:literal, { $($variant:ident => $text:literal $(| $alias:literal)*),+ $(,)? }) => {
        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = ModelError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text $(| $alias)* => Ok($name::$variant),)+
                    _ => Err(ModelError::UnknownName { kind: $kind, name: s.to_string() }),
                }
            }
        }
    };
}

/// The four resource types. The starred variants are delay-critical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ResourceType {
    #[serde(rename = "GBR")]
    Gbr,
    #[serde(rename = "GBR_DC", alias = "GBR*")]
    GbrDc,
    #[serde(rename = "NON_GBR", alias = "Non-GBR")]
    NonGbr,
    #[serde(rename = "NON_GBR_DC", alias = "Non-GBR*")]
    NonGbrDc,
}

text_enum!(ResourceType, "resource type", {
    Gbr => "GBR",
    GbrDc => "GBR_DC" | "GBR*",
    NonGbr => "NON_GBR" | "Non-GBR",
    NonGbrDc => "NON_GBR_DC" | "Non-GBR*",
});

impl ResourceType {
    pub fn is_delay_critical(self) -> bool {
        matches!(self, ResourceType::GbrDc | ResourceType::NonGbrDc)
    }

    /// Every type except plain Non-GBR is metered per flow against a CIR.
    pub fn is_guaranteed(self) -> bool {
        !matches!(self, ResourceType::NonGbr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Color {
    Green,
    Yellow,
    Red,
}

text_enum!(Color, "color", {
    Green => "GREEN",
    Yellow => "YELLOW",
    Red => "RED",
});

/// Outcome of the single-bucket aggregate meter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Conformance {
    Conform,
    Exceed,
}

/// What a meter said about a packet: a trTCM color or an aggregate verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Marking {
    Color(Color),
    Aggregate(Conformance),
}

impl Marking {
    pub fn is_drop(self) -> bool {
        matches!(
            self,
            Marking::Color(Color::Red) | Marking::Aggregate(Conformance::Exceed)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ServiceTag {
    Dedicated,
    DelayCritical,
    Prioritized,
    Shared,
}

text_enum!(ServiceTag, "service tag", {
    Dedicated => "DEDICATED",
    DelayCritical => "DELAY_CRITICAL",
    Prioritized => "PRIORITIZED",
    Shared => "SHARED",
});

/// One row of the 5QI table plus the negotiated flow rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QosProfile {
    pub five_qi: FiveQi,
    pub resource_type: ResourceType,
    /// Lower value means more important.
    pub priority_level: u8,
    pub pdb_ms: u32,
    pub cn_pdb_ms: u32,
    pub per: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gfbr_bps: Option<Bps>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mfbr_bps: Option<Bps>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub averaging_window_ms: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mdbv_bytes: Option<u64>,
}

impl QosProfile {
    pub fn pdb(&self) -> Nanos {
        self.pdb_ms as u64 * NANOS_PER_MS
    }

    pub fn cn_pdb(&self) -> Nanos {
        self.cn_pdb_ms as u64 * NANOS_PER_MS
    }

    pub fn is_delay_critical(&self) -> bool {
        self.resource_type.is_delay_critical()
    }
}

/// Checks the profile invariants and hands the profile back unchanged.
pub fn validate_profile(profile: QosProfile) -> Result<QosProfile, ModelError> {
    let bad = |reason: &str| ModelError::InvalidProfile {
        five_qi: profile.five_qi.0,
        reason: reason.to_string(),
    };
    if profile.cn_pdb_ms > profile.pdb_ms {
        return Err(bad("cn_pdb exceeds pdb"));
    }
    if !(0.0..=1.0).contains(&profile.per) || profile.per.is_nan() {
        return Err(bad("per outside [0, 1]"));
    }
    if !profile.resource_type.is_guaranteed()
        && (profile.gfbr_bps.is_some() || profile.mfbr_bps.is_some())
    {
        return Err(bad("Non-GBR profile carries gfbr/mfbr"));
    }
    if profile.gfbr_bps.is_some() != profile.mfbr_bps.is_some() {
        return Err(bad("gfbr and mfbr must be given together"));
    }
    if let (Some(g), Some(m)) = (profile.gfbr_bps, profile.mfbr_bps) {
        if g > m {
            return Err(bad("gfbr exceeds mfbr"));
        }
    }
    if profile.resource_type.is_delay_critical() && profile.mdbv_bytes.is_none() {
        return Err(bad("delay-critical profile without mdbv"));
    }
    Ok(profile)
}

/// Standardised 5QI rows used throughout the examples. GBR rows carry the
/// standard 2000 ms averaging window; delay-critical GBR rows carry their
/// standard MDBV.
pub fn standard_profiles() -> Vec<QosProfile> {
    use ResourceType::*;
    let row = |qi: u8, rt: ResourceType, prio: u8, pdb: u32, cn: u32, per: f64| QosProfile {
        five_qi: FiveQi(qi),
        resource_type: rt,
        priority_level: prio,
        pdb_ms: pdb,
        cn_pdb_ms: cn,
        per,
        gfbr_bps: None,
        mfbr_bps: None,
        averaging_window_ms: rt.is_guaranteed().then_some(2000),
        mdbv_bytes: None,
    };
    let mut rows = vec![
        row(2, Gbr, 40, 150, 20, 1e-3),
        row(4, Gbr, 50, 300, 20, 1e-3),
        row(65, Gbr, 7, 75, 10, 1e-2),
        row(67, Gbr, 15, 100, 20, 1e-3),
        row(7, NonGbr, 70, 100, 20, 1e-3),
        row(69, NonGbr, 5, 60, 10, 1e-6),
        row(80, NonGbr, 68, 10, 2, 1e-6),
        row(84, GbrDc, 24, 30, 5, 1e-5),
        row(86, GbrDc, 18, 5, 2, 1e-4),
        row(89, GbrDc, 25, 15, 1, 1e-4),
    ];
    for r in &mut rows {
        r.mdbv_bytes = match r.five_qi.0 {
            84 | 86 => Some(1354),
            89 => Some(17_000),
            _ => None,
        };
    }
    rows
}

/// Pipeline metadata attached to a packet as it moves through the stages.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PacketMeta {
    pub five_qi: Option<FiveQi>,
    pub resource_type: Option<ResourceType>,
    pub priority_level: Option<u8>,
    pub marking: Option<Marking>,
    pub service_tag: Option<ServiceTag>,
    pub queue_id: Option<QueueId>,
    pub ingress_ts: Option<Nanos>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub pkt_id: u64,
    pub flow_id: FlowId,
    /// Full wire frame length.
    pub size_bytes: u32,
    pub arrival_time: Nanos,
    pub meta: PacketMeta,
    /// Time the last bit left the output link.
    pub departure_time: Option<Nanos>,
}

impl PacketRecord {
    pub fn new(pkt_id: u64, flow_id: FlowId, size_bytes: u32, arrival_time: Nanos) -> Self {
        PacketRecord {
            pkt_id,
            flow_id,
            size_bytes,
            arrival_time,
            meta: PacketMeta::default(),
            departure_time: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub capacity_bps: Bps,
}

impl LinkConfig {
    pub fn new(capacity_bps: Bps) -> Result<Self, ModelError> {
        let link = LinkConfig { capacity_bps };
        link.validate()?;
        Ok(link)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.capacity_bps == 0 {
            return Err(ModelError::ZeroCapacity);
        }
        Ok(())
    }
}
