//! Meter verdict + profile to service tag (or drop).

use serde::{Deserialize, Serialize};

use crate::model::{Color, Conformance, Marking, QosProfile, ResourceType, ServiceTag};

/// How `priority_level` is compared with the threshold. 3GPP priority values
/// decrease with importance, so the default treats "at or below the
/// threshold" as mission-critical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdComparator {
    #[default]
    AtOrBelow,
    AtOrAbove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub priority_threshold: u8,
    #[serde(default)]
    pub comparator: ThresholdComparator,
    /// Share of the Non-GBR aggregate treated as prioritized in the analytic
    /// model. `None` derives it from the configured aggregate meters.
    #[serde(default)]
    pub nongbr_prioritized_fraction: Option<f64>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            priority_threshold: 10,
            comparator: ThresholdComparator::AtOrBelow,
            nongbr_prioritized_fraction: None,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), String> {
        match self.nongbr_prioritized_fraction {
            Some(p) if !(0.0..=1.0).contains(&p) || p.is_nan() => {
                Err(format!("nongbr_prioritized_fraction {p} outside [0, 1]"))
            }
            _ => Ok(()),
        }
    }

    pub fn is_prioritized(&self, priority_level: u8) -> bool {
        match self.comparator {
            ThresholdComparator::AtOrBelow => priority_level <= self.priority_threshold,
            ThresholdComparator::AtOrAbove => priority_level >= self.priority_threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TagDecision {
    Tag(ServiceTag),
    Drop,
}

pub fn tag(marking: Marking, profile: &QosProfile, cfg: &PolicyConfig) -> TagDecision {
    let excess = || {
        if cfg.is_prioritized(profile.priority_level) {
            TagDecision::Tag(ServiceTag::Prioritized)
        } else {
            TagDecision::Tag(ServiceTag::Shared)
        }
    };
    match marking {
        Marking::Color(Color::Red) | Marking::Aggregate(Conformance::Exceed) => TagDecision::Drop,
        Marking::Color(Color::Green) => match profile.resource_type {
            ResourceType::GbrDc | ResourceType::NonGbrDc => {
                TagDecision::Tag(ServiceTag::DelayCritical)
            }
            ResourceType::Gbr => TagDecision::Tag(ServiceTag::Dedicated),
            // Plain Non-GBR has no committed rate; a green mark only says it
            // is within its aggregate.
            ResourceType::NonGbr => excess(),
        },
        Marking::Color(Color::Yellow) | Marking::Aggregate(Conformance::Conform) => excess(),
    }
}
