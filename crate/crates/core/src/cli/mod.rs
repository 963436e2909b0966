//! Operator entry point: `sim`, `run`, `bench` and `record-inspect`.

mod bench;
mod config;
mod controllers;
mod run;
mod sim;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use bench::{cmd_bench, BenchConfig, GroupProbe};
pub use config::{FleetSettings, RosterEntry, RunConfig};
pub use controllers::{
    Controller, ControllerKind, ControllerName, ImpedanceParams, RampParams, Setpoint, SineParams, TorqueStepParams,
};
pub use run::{cmd_run, emergency_stop, EmergencyStop, RunOptions, RunOutcome, RunSummary};
pub use sim::{cmd_sim, load_sim_config, parse_sim_config};

use crate::actuation::SafetyConfig;
use crate::bus::BusConfig;
use crate::clocking::BenchParams;

/// Environment variable naming the default bus, e.g. `virtual:vbus0`.
pub const BUS_ENV: &str = "QDD_BUS";
pub const DEFAULT_BUS: &str = "virtual:vbus0";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_SAFETY: i32 = 4;
/// Second interrupt: forced exit after a best-effort disable.
pub const EXIT_FORCED: i32 = 130;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("safety abort: {0}")]
    SafetyAbort(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::SafetyAbort(_) => EXIT_SAFETY,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "qddrive", version, about = "Drive QDD actuators over CAN or a virtual bus")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Serve simulated actuators on a bus until interrupted.
    Sim(SimArgs),
    /// Run a bundled controller.
    Run(Box<RunArgs>),
    /// Search the maximum loop rate per actuator count.
    Bench(BenchArgs),
    /// Print a recording's header and row count.
    RecordInspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Simulation config (TOML).
    pub config: PathBuf,
    /// virtual:NAME or can:IFACE [env: QDD_BUS]
    #[arg(long)]
    pub bus: Option<String>,
    /// Stop after this many seconds.
    #[arg(long)]
    pub duration: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run config (TOML); flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// virtual:NAME or can:IFACE [env: QDD_BUS]
    #[arg(long)]
    pub bus: Option<String>,
    /// Actuator as MODEL:ID; repeat for each.
    #[arg(long = "actuator", value_name = "MODEL:ID")]
    pub actuators: Vec<RosterEntry>,
    /// Loop rate, Hz.
    #[arg(long)]
    pub freq: Option<f64>,
    /// Seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Telemetry destination HOST:PORT.
    #[arg(long)]
    pub telemetry: Option<String>,
    /// Record to this file.
    #[arg(long)]
    pub record: Option<PathBuf>,
    /// Recording delimiter (one character, or "tab").
    #[arg(long, value_parser = parse_delimiter)]
    pub delimiter: Option<u8>,
    /// Replace an existing recording.
    #[arg(long)]
    pub overwrite: bool,
    #[arg(long)]
    pub saturate_rated: bool,
    #[arg(long)]
    pub thermal_autolimit: bool,
    /// Virtual buses only: run on the virtual clock.
    #[arg(long)]
    pub virtual_time: bool,
    /// Virtual buses only: don't spawn a simulated fleet.
    #[arg(long)]
    pub no_fleet: bool,
    /// Virtual buses only: transmit capacity, frames/s.
    #[arg(long)]
    pub capacity: Option<f64>,
    /// Write the resolved config here before running.
    #[arg(long)]
    pub write_config: Option<PathBuf>,
    /// Only resolve, validate and (optionally) write the config.
    #[arg(long)]
    pub dry_run: bool,
    #[arg(long, value_name = "KIND")]
    pub controller: Option<ControllerName>,
    #[command(flatten)]
    pub params: ControllerFlags,
}

#[derive(Debug, Args, Default)]
pub struct ControllerFlags {
    /// sine-position: rad
    #[arg(long)]
    pub amplitude: Option<f64>,
    /// sine-position: signal frequency, Hz
    #[arg(long)]
    pub signal_hz: Option<f64>,
    /// sine-position: rad
    #[arg(long)]
    pub offset: Option<f64>,
    /// impedance-hold: rad
    #[arg(long)]
    pub setpoint: Option<f64>,
    /// torque-step: Nm after the step
    #[arg(long)]
    pub torque: Option<f64>,
    /// torque-step: Nm before the step
    #[arg(long)]
    pub initial_torque: Option<f64>,
    /// torque-step: seconds
    #[arg(long)]
    pub step_time: Option<f64>,
    /// velocity-ramp: rad/s²
    #[arg(long)]
    pub acceleration: Option<f64>,
    /// velocity-ramp: rad/s
    #[arg(long)]
    pub max_velocity: Option<f64>,
    #[arg(long)]
    pub kp: Option<f64>,
    #[arg(long)]
    pub kd: Option<f64>,
    /// impedance-hold: Nm
    #[arg(long)]
    pub torque_ff: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// virtual:NAME or can:IFACE [env: QDD_BUS]
    #[arg(long)]
    pub bus: Option<String>,
    /// Actuator counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub counts: Vec<u32>,
    #[arg(long, default_value = "AK80-9")]
    pub model: String,
    /// Virtual buses only: transmit capacity, frames/s.
    #[arg(long)]
    pub capacity: Option<f64>,
    #[arg(long, default_value_t = BenchParams::default().lo)]
    pub lo: f64,
    #[arg(long, default_value_t = BenchParams::default().hi)]
    pub hi: f64,
    #[arg(long, default_value_t = BenchParams::default().resolution)]
    pub resolution: f64,
    /// Seconds per candidate.
    #[arg(long, default_value_t = BenchParams::default().dwell)]
    pub dwell: f64,
    /// Seconds for the final validation run.
    #[arg(long, default_value_t = BenchParams::default().validation_dwell)]
    pub validation_dwell: f64,
    #[arg(long, default_value_t = BenchParams::default().max_overrun_fraction)]
    pub max_overrun_fraction: f64,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
    #[arg(long, value_parser = parse_delimiter, default_value = ",")]
    pub delimiter: u8,
}

fn parse_delimiter(s: &str) -> Result<u8, String> {
    match s {
        "tab" | "\\t" | "\t" => Ok(b'\t'),
        _ if s.len() == 1 && s.is_ascii() => Ok(s.as_bytes()[0]),
        _ => Err(format!("delimiter must be a single ASCII character, got {s:?}")),
    }
}

/// Flag, then config file, then `QDD_BUS`, then the built-in default.
fn resolve_bus(flag: Option<&str>, from_file: Option<&BusConfig>) -> Result<BusConfig, CliError> {
    let parse = |s: &str| s.parse::<BusConfig>().map_err(|e| CliError::Config(e.to_string()));
    if let Some(f) = flag {
        let mut b = parse(f)?;
        if let Some(file) = from_file {
            if file.backend == b.backend {
                b = BusConfig {
                    interface_name: b.interface_name,
                    ..file.clone()
                };
            }
        }
        return Ok(b);
    }
    if let Some(file) = from_file {
        return Ok(file.clone());
    }
    match std::env::var(BUS_ENV) {
        Ok(v) if !v.is_empty() => parse(&v),
        _ => parse(DEFAULT_BUS),
    }
}

fn apply_params(kind: &mut ControllerKind, f: &ControllerFlags) -> Result<(), CliError> {
    let mut unused = Vec::new();
    let mut set = |slot: Option<&mut f64>, v: Option<f64>, flag: &str| match (slot, v) {
        (Some(s), Some(v)) => *s = v,
        (None, Some(_)) => unused.push(flag.to_string()),
        _ => {}
    };
    let name = kind.name();
    match kind {
        ControllerKind::SinePosition(p) => {
            set(Some(&mut p.amplitude), f.amplitude, "--amplitude");
            set(Some(&mut p.frequency), f.signal_hz, "--signal-hz");
            set(Some(&mut p.offset), f.offset, "--offset");
            set(Some(&mut p.kp), f.kp, "--kp");
            set(Some(&mut p.kd), f.kd, "--kd");
            for (v, flag) in [
                (f.setpoint, "--setpoint"),
                (f.torque, "--torque"),
                (f.initial_torque, "--initial-torque"),
                (f.step_time, "--step-time"),
                (f.acceleration, "--acceleration"),
                (f.max_velocity, "--max-velocity"),
                (f.torque_ff, "--torque-ff"),
            ] {
                set(None, v, flag);
            }
        }
        ControllerKind::TorqueStep(p) => {
            set(Some(&mut p.torque), f.torque, "--torque");
            set(Some(&mut p.initial), f.initial_torque, "--initial-torque");
            set(Some(&mut p.step_time), f.step_time, "--step-time");
            for (v, flag) in [
                (f.amplitude, "--amplitude"),
                (f.signal_hz, "--signal-hz"),
                (f.offset, "--offset"),
                (f.setpoint, "--setpoint"),
                (f.acceleration, "--acceleration"),
                (f.max_velocity, "--max-velocity"),
                (f.kp, "--kp"),
                (f.kd, "--kd"),
                (f.torque_ff, "--torque-ff"),
            ] {
                set(None, v, flag);
            }
        }
        ControllerKind::ImpedanceHold(p) => {
            set(Some(&mut p.setpoint), f.setpoint, "--setpoint");
            set(Some(&mut p.kp), f.kp, "--kp");
            set(Some(&mut p.kd), f.kd, "--kd");
            set(Some(&mut p.torque_ff), f.torque_ff, "--torque-ff");
            for (v, flag) in [
                (f.amplitude, "--amplitude"),
                (f.signal_hz, "--signal-hz"),
                (f.offset, "--offset"),
                (f.torque, "--torque"),
                (f.initial_torque, "--initial-torque"),
                (f.step_time, "--step-time"),
                (f.acceleration, "--acceleration"),
                (f.max_velocity, "--max-velocity"),
            ] {
                set(None, v, flag);
            }
        }
        ControllerKind::VelocityRamp(p) => {
            set(Some(&mut p.acceleration), f.acceleration, "--acceleration");
            set(Some(&mut p.max_velocity), f.max_velocity, "--max-velocity");
            set(Some(&mut p.kd), f.kd, "--kd");
            for (v, flag) in [
                (f.amplitude, "--amplitude"),
                (f.signal_hz, "--signal-hz"),
                (f.offset, "--offset"),
                (f.setpoint, "--setpoint"),
                (f.torque, "--torque"),
                (f.initial_torque, "--initial-torque"),
                (f.step_time, "--step-time"),
                (f.kp, "--kp"),
                (f.torque_ff, "--torque-ff"),
            ] {
                set(None, v, flag);
            }
        }
    }
    if unused.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{} not used by {name}", unused.join(", "))))
    }
}

/// Merges flags over the config file (if any) and validates the result.
pub fn resolve_run_config(args: &RunArgs) -> Result<RunConfig, CliError> {
    let file = args.config.as_deref().map(RunConfig::load).transpose()?;
    let has_file = file.is_some();
    let freq = args.freq.or(file.as_ref().map(|c| c.frequency)).unwrap_or(200.0);
    let mut cfg = file.unwrap_or_else(|| {
        RunConfig::new(
            Vec::new(),
            ControllerKind::defaults(args.controller.unwrap_or(ControllerName::SinePosition)),
            freq,
            10.0,
        )
    });
    cfg.bus = resolve_bus(args.bus.as_deref(), has_file.then_some(&cfg.bus))?;
    if !args.actuators.is_empty() {
        cfg.actuators = args.actuators.clone();
    }
    if let Some(f) = args.freq {
        cfg.frequency = f;
        if !has_file {
            cfg.safety = SafetyConfig::for_frequency(f);
        }
    }
    if let Some(d) = args.duration {
        cfg.duration = d;
    }
    if let Some(t) = &args.telemetry {
        cfg.telemetry = Some(t.clone());
    }
    if let Some(r) = &args.record {
        cfg.record = Some(r.clone());
    }
    if let Some(d) = args.delimiter {
        cfg.recorder.delimiter = d;
    }
    if args.overwrite {
        cfg.recorder.overwrite = true;
    }
    if args.saturate_rated {
        cfg.safety.saturate_to_rated = true;
    }
    if args.thermal_autolimit {
        cfg.safety.thermal_autolimit = true;
    }
    if args.virtual_time {
        cfg.virtual_time = true;
    }
    if args.no_fleet {
        cfg.spawn_fleet = false;
    }
    if let Some(c) = args.capacity {
        cfg.bus.virtual_options.capacity_fps = Some(c);
    }
    if let Some(name) = args.controller {
        if name != cfg.controller.name() {
            cfg.controller = ControllerKind::defaults(name);
        }
    }
    apply_params(&mut cfg.controller, &args.params)?;
    if cfg.actuators.is_empty() {
        return Err(CliError::Config(
            "no actuators: pass --actuator MODEL:ID or list [[actuators]] in --config".into(),
        ));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn bench_config(args: &BenchArgs) -> Result<BenchConfig, CliError> {
    let mut bus = resolve_bus(args.bus.as_deref(), None)?;
    if args.capacity.is_some() {
        bus.virtual_options.capacity_fps = args.capacity;
    }
    Ok(BenchConfig {
        bus,
        counts: args.counts.clone(),
        params: BenchParams {
            lo: args.lo,
            hi: args.hi,
            resolution: args.resolution,
            dwell: args.dwell,
            validation_dwell: args.validation_dwell,
            max_overrun_fraction: args.max_overrun_fraction,
        },
        model: args.model.clone(),
    })
}

/// Executes a parsed command; returns the process exit code.
pub fn execute(cli: Cli, shutdown: Arc<AtomicBool>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let r = match cli.command {
        Command::Sim(a) => (|| {
            let cfg = load_sim_config(&a.config)?;
            let bus = resolve_bus(a.bus.as_deref(), None)?;
            cmd_sim(&cfg, &bus, &shutdown, a.duration, out)
        })(),
        Command::Run(a) => (|| {
            let cfg = resolve_run_config(&a)?;
            if let Some(p) = &a.write_config {
                cfg.save(p)?;
            }
            if a.dry_run {
                let _ = write!(out, "{}", cfg.to_toml_string()?);
                return Ok(());
            }
            cmd_run(
                &cfg,
                RunOptions {
                    shutdown: shutdown.clone(),
                    controller: None,
                },
                out,
            )
            .map(|_| ())
        })(),
        Command::Bench(a) => bench_config(&a).and_then(|c| cmd_bench(&c, out)).map(|_| ()),
        Command::RecordInspect(a) => crate::recorder::inspect(&a.path, a.delimiter)
            .map(|s| {
                let _ = writeln!(out, "{}", a.path.display());
                let _ = writeln!(out, "{s}");
            })
            .map_err(|e| CliError::Runtime(e.to_string())),
    };
    match r {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Parses `args` and executes. Usage errors exit with [`EXIT_CONFIG`].
pub fn run_cli<I, T>(args: I, shutdown: Arc<AtomicBool>, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli, shutdown, out, err),
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            if e.use_stderr() {
                EXIT_CONFIG
            } else {
                EXIT_OK
            }
        }
    }
}
