//! Closed-form admission test, tier service rates, worst-case arrival rates
//! and delay bounds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Bps, Nanos, NANOS_PER_SEC};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalyticsError {
    #[error("committed rates exceed the link by {excess_bps} bps")]
    NotAdmitted { excess_bps: u64 },
    #[error("invalid analytic input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRates {
    pub cir_bps: Bps,
    pub pir_bps: Bps,
    pub prioritized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticInputs {
    pub link_bps: Bps,
    /// Every active flow of a guaranteed 5QI.
    pub flows: Vec<FlowRates>,
    /// Aggregate Non-GBR peak rate.
    pub pir_ng_bps: Bps,
    /// Share of `pir_ng_bps` that is prioritized.
    pub p: f64,
    pub buffer_bytes: u64,
}

impl AnalyticInputs {
    pub fn validate(&self) -> Result<(), AnalyticsError> {
        if self.link_bps == 0 {
            return Err(AnalyticsError::InvalidInput("link rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(AnalyticsError::InvalidInput(format!("p = {} outside [0, 1]", self.p)));
        }
        if let Some(f) = self.flows.iter().find(|f| f.cir_bps > f.pir_bps) {
            return Err(AnalyticsError::InvalidInput(format!(
                "cir {} above pir {}",
                f.cir_bps, f.pir_bps
            )));
        }
        Ok(())
    }

    pub fn committed_sum(&self) -> u64 {
        self.flows.iter().map(|f| f.cir_bps).sum()
    }

    /// PIR_NG * p, rounded half up.
    pub fn prioritized_nongbr(&self) -> u64 {
        (self.pir_ng_bps as f64 * self.p).round() as u64
    }

    fn excess_sum(&self, prioritized: bool) -> u64 {
        self.flows
            .iter()
            .filter(|f| f.prioritized == prioritized)
            .map(|f| f.pir_bps - f.cir_bps)
            .sum()
    }

    /// Worst-case arrival rate of the prioritized tier.
    pub fn prioritized_demand(&self) -> u64 {
        self.prioritized_nongbr() + self.excess_sum(true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Admission {
    Admit { committed_bps: u64 },
    Reject { committed_bps: u64, excess_bps: u64 },
}

impl Admission {
    pub fn is_admit(&self) -> bool {
        matches!(self, Admission::Admit { .. })
    }
}

pub fn admission_check(inputs: &AnalyticInputs) -> Admission {
    let committed_bps = inputs.committed_sum();
    if committed_bps <= inputs.link_bps {
        Admission::Admit { committed_bps }
    } else {
        Admission::Reject {
            committed_bps,
            excess_bps: committed_bps - inputs.link_bps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceRates {
    pub r_h: u64,
    pub delta_r: i64,
    pub r_m: u64,
    pub r_l: u64,
}

pub fn service_rates(inputs: &AnalyticInputs) -> Result<ServiceRates, AnalyticsError> {
    if let Admission::Reject { excess_bps, .. } = admission_check(inputs) {
        return Err(AnalyticsError::NotAdmitted { excess_bps });
    }
    let r_h = inputs.committed_sum();
    let residual = inputs.link_bps - r_h;
    let r_m = residual.min(inputs.prioritized_demand());
    Ok(ServiceRates {
        r_h,
        delta_r: residual as i64,
        r_m,
        r_l: residual - r_m,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrivalRates {
    pub r_in_m: u64,
    pub r_in_l: u64,
}

pub fn arrival_rates(inputs: &AnalyticInputs) -> ArrivalRates {
    let ng_m = inputs.prioritized_nongbr();
    ArrivalRates {
        r_in_m: ng_m + inputs.excess_sum(true),
        r_in_l: inputs.pir_ng_bps.saturating_sub(ng_m) + inputs.excess_sum(false),
    }
}

/// A delay bound; `None` marks a zero service rate.
pub type Bound = Option<Nanos>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayBounds {
    pub d_h: Nanos,
    pub d_s: Nanos,
    pub d_m: Bound,
    pub d_l: Bound,
}

/// Time to drain `bytes` at `rate`, rounded half up. `None` if `rate` is 0.
pub fn drain_time(bytes: u64, rate: Bps) -> Bound {
    if rate == 0 {
        return None;
    }
    let num = bytes as u128 * 8 * NANOS_PER_SEC as u128;
    let rate = rate as u128;
    Some(((2 * num + rate) / (2 * rate)) as Nanos)
}

pub fn delay_bounds(buffer_bytes: u64, link: Bps, r_m: Bps, r_l: Bps) -> DelayBounds {
    assert!(link > 0, "link rate must be positive");
    DelayBounds {
        d_h: drain_time(buffer_bytes, link).unwrap(),
        d_s: drain_time(2 * buffer_bytes, link).unwrap(),
        d_m: drain_time(buffer_bytes, r_m),
        d_l: drain_time(buffer_bytes, r_l),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyticOutputs {
    pub r_h: u64,
    pub delta_r: i64,
    pub r_m: u64,
    pub r_l: u64,
    pub r_in_m: u64,
    pub r_in_l: u64,
    pub d_h: Nanos,
    pub d_s: Nanos,
    pub d_m: Bound,
    pub d_l: Bound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyticReport {
    pub admission: Admission,
    /// Absent when admission fails.
    pub outputs: Option<AnalyticOutputs>,
    pub arrivals: ArrivalRates,
}

/// Everything at once. On REJECT only the verdict and arrival rates are
/// meaningful.
pub fn analyze(inputs: &AnalyticInputs) -> Result<AnalyticReport, AnalyticsError> {
    inputs.validate()?;
    let admission = admission_check(inputs);
    let arrivals = arrival_rates(inputs);
    let outputs = service_rates(inputs).ok().map(|s| {
        let d = delay_bounds(inputs.buffer_bytes, inputs.link_bps, s.r_m, s.r_l);
        AnalyticOutputs {
            r_h: s.r_h,
            delta_r: s.delta_r,
            r_m: s.r_m,
            r_l: s.r_l,
            r_in_m: arrivals.r_in_m,
            r_in_l: arrivals.r_in_l,
            d_h: d.d_h,
            d_s: d.d_s,
            d_m: d.d_m,
            d_l: d.d_l,
        }
    });
    Ok(AnalyticReport {
        admission,
        outputs,
        arrivals,
    })
}
