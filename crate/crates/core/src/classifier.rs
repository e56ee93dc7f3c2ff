//! QoS profiler (inner UDP source port range to 5QI) and flow identifier
//! (GTP-U TEID).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_profile, FiveQi, FlowId, ModelError, QosProfile, ResourceType};
use crate::wire::ParsedHeaders;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error("no profile for 5QI {0}")]
    MissingProfile(FiveQi),
    #[error("port range {lo}..={hi} is inverted")]
    InvertedRange { lo: u16, hi: u16 },
    #[error("port ranges {a:?} and {b:?} overlap")]
    OverlappingRanges { a: (u16, u16), b: (u16, u16) },
    #[error("default 5QI {0} is not a Non-GBR profile")]
    DefaultNotNonGbr(FiveQi),
    #[error("no Non-GBR profile available as default")]
    NoDefault,
    #[error("duplicate profile for 5QI {0}")]
    DuplicateProfile(FiveQi),
    #[error(transparent)]
    Profile(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortRange {
    pub lo: u16,
    pub hi: u16,
    pub five_qi: FiveQi,
}

impl PortRange {
    pub fn contains(&self, port: u16) -> bool {
        (self.lo..=self.hi).contains(&port)
    }
}

/// Validated profile table keyed by 5QI.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProfileTable {
    profiles: BTreeMap<FiveQi, QosProfile>,
}

impl ProfileTable {
    pub fn new(profiles: impl IntoIterator<Item = QosProfile>) -> Result<Self, ClassifyError> {
        let mut map = BTreeMap::new();
        for p in profiles {
            let p = validate_profile(p)?;
            let qi = p.five_qi;
            if map.insert(qi, p).is_some() {
                return Err(ClassifyError::DuplicateProfile(qi));
            }
        }
        Ok(ProfileTable { profiles: map })
    }

    pub fn get(&self, five_qi: FiveQi) -> Option<&QosProfile> {
        self.profiles.get(&five_qi)
    }

    pub fn iter(&self) -> impl Iterator<Item = &QosProfile> {
        self.profiles.values()
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    /// The Non-GBR profile with the numerically largest (least important)
    /// priority level; ties go to the larger 5QI.
    pub fn least_important_non_gbr(&self) -> Option<FiveQi> {
        self.iter()
            .filter(|p| p.resource_type == ResourceType::NonGbr)
            .max_by_key(|p| (p.priority_level, p.five_qi))
            .map(|p| p.five_qi)
    }
}

/// Disjoint, sorted port ranges plus the fallback 5QI.
#[derive(Debug, Clone, PartialEq)]
pub struct PortRangeMap {
    entries: Vec<PortRange>,
    default_five_qi: FiveQi,
}

impl PortRangeMap {
    /// Builds the map, checking it against `table`. With no explicit default
    /// the least important Non-GBR profile is used.
    pub fn new(
        mut entries: Vec<PortRange>,
        default_five_qi: Option<FiveQi>,
        table: &ProfileTable,
    ) -> Result<Self, ClassifyError> {
        for e in &entries {
            if e.lo > e.hi {
                return Err(ClassifyError::InvertedRange { lo: e.lo, hi: e.hi });
            }
            if table.get(e.five_qi).is_none() {
                return Err(ClassifyError::MissingProfile(e.five_qi));
            }
        }
        entries.sort_by_key(|e| e.lo);
        for w in entries.windows(2) {
            if w[1].lo <= w[0].hi {
                return Err(ClassifyError::OverlappingRanges {
                    a: (w[0].lo, w[0].hi),
                    b: (w[1].lo, w[1].hi),
                });
            }
        }
        let default_five_qi = match default_five_qi {
            Some(qi) => qi,
            None => table.least_important_non_gbr().ok_or(ClassifyError::NoDefault)?,
        };
        match table.get(default_five_qi) {
            None => return Err(ClassifyError::MissingProfile(default_five_qi)),
            Some(p) if p.resource_type != ResourceType::NonGbr => {
                return Err(ClassifyError::DefaultNotNonGbr(default_five_qi))
            }
            Some(_) => {}
        }
        Ok(PortRangeMap {
            entries,
            default_five_qi,
        })
    }

    pub fn entries(&self) -> &[PortRange] {
        &self.entries
    }

    pub fn default_five_qi(&self) -> FiveQi {
        self.default_five_qi
    }

    pub fn lookup(&self, port: u16) -> FiveQi {
        let idx = self.entries.partition_point(|e| e.hi < port);
        match self.entries.get(idx) {
            Some(e) if e.contains(port) => e.five_qi,
            _ => self.default_five_qi,
        }
    }

    pub fn range_of(&self, five_qi: FiveQi) -> Option<&PortRange> {
        self.entries.iter().find(|e| e.five_qi == five_qi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification<'t> {
    pub five_qi: FiveQi,
    pub profile: &'t QosProfile,
    pub flow_id: FlowId,
}

pub fn classify<'t>(
    headers: &ParsedHeaders,
    map: &PortRangeMap,
    table: &'t ProfileTable,
) -> Result<Classification<'t>, ClassifyError> {
    let five_qi = map.lookup(headers.inner_udp.src_port);
    let profile = table
        .get(five_qi)
        .ok_or(ClassifyError::MissingProfile(five_qi))?;
    Ok(Classification {
        five_qi,
        profile,
        flow_id: headers.gtpu.teid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::standard_profiles;
    use crate::wire::{build_frame, parse_frame, FlowAddresses, FlowDescription};

    fn table() -> ProfileTable {
        ProfileTable::new(standard_profiles()).unwrap()
    }

    fn map(t: &ProfileTable) -> PortRangeMap {
        PortRangeMap::new(
            vec![PortRange {
                lo: 20000,
                hi: 20999,
                five_qi: FiveQi(2),
            }],
            None,
            t,
        )
        .unwrap()
    }

    fn headers(teid: u32, port: u16) -> ParsedHeaders {
        let d = FlowDescription {
            teid,
            inner_src_port: port,
            inner_dst_port: 80,
            payload_len: 10,
            addresses: FlowAddresses::default(),
        };
        parse_frame(&build_frame(&d).unwrap()).unwrap()
    }

    #[test]
    fn port_in_range_maps_to_its_5qi() {
        let t = table();
        let c = classify(&headers(1, 20500), &map(&t), &t).unwrap();
        assert_eq!(c.five_qi, FiveQi(2));
        assert_eq!(c.profile.resource_type, ResourceType::Gbr);
        assert_eq!(c.profile.priority_level, 40);
    }

    #[test]
    fn unmatched_port_falls_back_to_default() {
        let t = table();
        let m = map(&t);
        // 5QI 7 has the largest Non-GBR priority value (70) in the table.
        assert_eq!(m.default_five_qi(), FiveQi(7));
        let c = classify(&headers(1, 65000), &m, &t).unwrap();
        assert_eq!(c.five_qi, FiveQi(7));
        assert_eq!(c.profile.resource_type, ResourceType::NonGbr);
    }

    #[test]
    fn flow_id_is_teid() {
        let t = table();
        let m = map(&t);
        let a = classify(&headers(0x2A, 20500), &m, &t).unwrap();
        let b = classify(&headers(0x2A, 65000), &m, &t).unwrap();
        assert_eq!(a.flow_id, 42);
        assert_eq!(b.flow_id, 42);
    }

    #[test]
    fn bad_maps_rejected() {
        let t = table();
        let r = |lo, hi, qi| PortRange {
            lo,
            hi,
            five_qi: FiveQi(qi),
        };
        assert!(matches!(
            PortRangeMap::new(vec![r(10, 5, 2)], None, &t),
            Err(ClassifyError::InvertedRange { .. })
        ));
        assert!(matches!(
            PortRangeMap::new(vec![r(10, 20, 2), r(20, 30, 4)], None, &t),
            Err(ClassifyError::OverlappingRanges { .. })
        ));
        assert!(matches!(
            PortRangeMap::new(vec![r(10, 20, 3)], None, &t),
            Err(ClassifyError::MissingProfile(FiveQi(3)))
        ));
        assert!(matches!(
            PortRangeMap::new(vec![], Some(FiveQi(2)), &t),
            Err(ClassifyError::DefaultNotNonGbr(FiveQi(2)))
        ));
    }

    #[test]
    fn range_boundaries() {
        let t = table();
        let r = |lo, hi, qi| PortRange {
            lo,
            hi,
            five_qi: FiveQi(qi),
        };
        let m = PortRangeMap::new(vec![r(300, 399, 4), r(100, 199, 2)], Some(FiveQi(80)), &t)
            .unwrap();
        assert_eq!(m.lookup(99), FiveQi(80));
        assert_eq!(m.lookup(100), FiveQi(2));
        assert_eq!(m.lookup(199), FiveQi(2));
        assert_eq!(m.lookup(200), FiveQi(80));
        assert_eq!(m.lookup(399), FiveQi(4));
        assert_eq!(m.lookup(u16::MAX), FiveQi(80));
    }

    #[test]
    fn classification_is_deterministic() {
        let t = table();
        let m = map(&t);
        let h = headers(5, 20010);
        assert_eq!(classify(&h, &m, &t).unwrap(), classify(&h, &m, &t).unwrap());
    }
}
