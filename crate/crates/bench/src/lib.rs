//! Fixtures shared by the benchmarks.

use qosdp_core::traffic::FlowSpec;
use qosdp_core::wire::{build_frame, FlowAddresses};
use qosdp_core::{preset, ScenarioConfig, NANOS_PER_MS};

/// A preset cut down to `duration_ms`, keeping flows that start in its
/// first half.
pub fn short_scenario(name: &str, scale: u32, duration_ms: u64) -> ScenarioConfig {
    let mut cfg = preset(name, scale).expect("known preset");
    cfg.duration = duration_ms * NANOS_PER_MS;
    let half = cfg.duration / 2;
    cfg.flows.retain(|f| f.start_ns < half);
    for f in &mut cfg.flows {
        f.stop_ns = cfg.duration;
    }
    cfg
}

/// Wire frame of the first flow of a preset.
pub fn sample_frame(name: &str) -> Vec<u8> {
    let cfg = preset(name, 10).expect("known preset");
    let flow: &FlowSpec = &cfg.flows[0];
    build_frame(&flow.description(FlowAddresses::default()).expect("valid flow")).expect("frame")
}
