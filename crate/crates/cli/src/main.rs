use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use qosdp_core::config::{PresetRef, ScenarioFile};
use qosdp_core::engine::{analytic_inputs, run_with, EngineOptions};
use qosdp_core::presets;
use qosdp_core::{analyze, Admission, ConfigError, Format, Mode, ScenarioConfig};

#[derive(Parser)]
#[command(name = "qosdp", version, about = "QoS-aware 5G transport data plane simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write flows/queues/summary files.
    Run {
        #[command(flatten)]
        source: Source,
        /// Output directory.
        #[arg(long, env = "QOSDP_OUT", default_value = "qosdp-out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
        /// Also write trace.csv with one row per delivered packet.
        #[arg(long)]
        trace: bool,
    },
    /// Print a preset as a scenario document.
    Preset {
        name: String,
        #[arg(long, default_value_t = 1)]
        scale: u32,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print admission verdict, service rates and delay bounds.
    Analyze {
        #[command(flatten)]
        source: Source,
    },
    /// Validate a scenario and print its admission verdict.
    Check {
        #[command(flatten)]
        source: Source,
    },
    /// List the built-in presets.
    ListPresets,
}

#[derive(Args)]
struct Source {
    /// Built-in preset name.
    #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
    preset: Option<String>,
    /// Scenario JSON file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Divide flow counts and link capacity of the preset by this factor.
    #[arg(long)]
    scale: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Flow,
    Baseline,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl Source {
    fn load(&self) -> Result<ScenarioConfig, ConfigError> {
        let mut file = match (&self.preset, &self.scenario) {
            (Some(name), _) => ScenarioFile {
                preset: Some(PresetRef::Scaled {
                    name: name.clone(),
                    scale: 1,
                }),
                ..Default::default()
            },
            (None, Some(path)) => ScenarioFile::load(path)?,
            (None, None) => unreachable!("clap requires one source"),
        };
        if let Some(scale) = self.scale {
            let Some(p) = file.preset.take() else {
                return Err(ConfigError::Invalid("--scale applies only to presets".into()));
            };
            file.preset = Some(PresetRef::Scaled {
                name: p.name().to_string(),
                scale,
            });
        }
        if let Some(seed) = self.seed {
            file.seed = Some(seed);
        }
        if let Some(mode) = self.mode {
            file.mode = Some(match mode {
                ModeArg::Flow => Mode::Flow,
                ModeArg::Baseline => Mode::Baseline,
            });
        }
        file.resolve()
    }
}

/// Prints a line; a closed pipe (`qosdp ... | head`) is not an error.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

fn run(source: &Source, out: &Path, format: FormatArg, trace: bool) -> Result<(), Failure> {
    let cfg = source.load()?;
    let options = EngineOptions {
        record_trace: trace,
        ..Default::default()
    };
    let m = run_with(&cfg, options).map_err(|e| Failure::Runtime(e.to_string()))?;
    let format = match format {
        FormatArg::Csv => Format::Csv,
        FormatArg::Json => Format::Json,
    };
    let io = |e: std::io::Error| Failure::Runtime(format!("writing {}: {e}", out.display()));
    std::fs::create_dir_all(out).map_err(io)?;
    let mut files = m.write(out, format).map_err(io)?;
    if let Some(records) = &m.trace {
        let mut w = csv::Writer::from_path(out.join("trace.csv")).map_err(|e| Failure::Runtime(e.to_string()))?;
        for r in records {
            w.serialize(r).map_err(|e| Failure::Runtime(e.to_string()))?;
        }
        w.flush().map_err(io)?;
        files.push("trace.csv".into());
    }
    let s = &m.summary;
    say!(
        "{}: {} flows, offered/capacity {:.3}, delivered {}/{} packets, meter drops {}, queue drops {}, {} alerts",
        s.scenario,
        s.flows,
        s.offered_load_ratio,
        s.packets_delivered,
        s.packets_generated,
        s.meter_drops,
        s.queue_drops,
        s.alerts.len()
    );
    say!("wrote {} to {} in {:.2?}", files.join(", "), out.display(), m.wall_clock);
    Ok(())
}

fn analyze_cmd(source: &Source) -> Result<(), Failure> {
    let cfg = source.load()?;
    let report = analyze(&analytic_inputs(&cfg)).map_err(|e| Failure::Config(e.to_string()))?;
    say!("{}", to_json(&report));
    Ok(())
}

fn check(source: &Source) -> Result<(), Failure> {
    let cfg = source.load()?;
    let report = analyze(&analytic_inputs(&cfg)).map_err(|e| Failure::Config(e.to_string()))?;
    say!("{}", to_json(&report.admission));
    match report.admission {
        Admission::Admit { .. } => Ok(()),
        Admission::Reject {
            committed_bps,
            excess_bps,
        } => Err(Failure::Config(format!(
            "committed rate {committed_bps} bps exceeds the {} bps link by {excess_bps} bps",
            cfg.link.capacity_bps
        ))),
    }
}

fn preset_cmd(name: &str, scale: u32, seed: Option<u64>) -> Result<(), Failure> {
    let cfg = presets::preset_with_seed(name, scale, seed.unwrap_or(presets::DEFAULT_SEED))?;
    say!("{}", to_json(&cfg.to_file()));
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            source,
            out,
            format,
            trace,
        } => run(source, out, *format, *trace),
        Command::Preset { name, scale, seed } => preset_cmd(name, *scale, *seed),
        Command::Analyze { source } => analyze_cmd(source),
        Command::Check { source } => check(source),
        Command::ListPresets => {
            for name in presets::PRESET_NAMES {
                say!("{name:<18} {}", presets::description(name).unwrap_or(""));
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
