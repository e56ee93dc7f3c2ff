pub mod analytics;
pub mod classifier;
pub mod config;
pub mod egress;
pub mod meter;
pub mod model;
pub mod presets;
pub mod tagging;
pub mod traffic;
pub mod wire;
pub mod engine;
pub mod metrics;

pub use analytics::{analyze, AnalyticInputs, AnalyticOutputs, AnalyticReport, Admission};
pub use config::{ConfigError, Mode, ScenarioConfig, ScenarioFile};
pub use egress::{QueueMap, EgressState};
pub use engine::{run, run_with, EngineError, EngineOptions, ReconfigureHook};
pub use meter::{MeterMatrix, MeterParams};
pub use metrics::{Format, RunMetrics};
pub use model::*;
pub use presets::{preset, preset_with_seed, PRESET_NAMES};
