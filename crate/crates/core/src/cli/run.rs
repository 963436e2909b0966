use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use super::controllers::{Controller, Setpoint};
use super::{CliError, RunConfig};
use crate::actuation::{ActuatorGroup, ActuatorState, GroupError, SafetyEventKind};
use crate::bus::{self, Backend, BusConfig, BusError, CanBus, CanFrame, ResponderId, VirtualBus};
use crate::clocking::{RateClock, RateStats};
use crate::protocol::{
    encode_mit_command, encode_special, lookup_model, ActuatorModelSpec, MitCommand, SpecialFrameKind,
};
use crate::recorder::{Cell, LogOutcome, Recorder};
use crate::simulation::{ReplyMode, VirtualFleet};
use crate::telemetry::{TelemetryPublisher, TelemetryRecord, TelemetryStats};
use crate::time::TimeSource;

const EVENT_KINDS: [SafetyEventKind; 4] = [
    SafetyEventKind::RatedExceededWarning,
    SafetyEventKind::ThermalLimitEngaged,
    SafetyEventKind::ThermalLimitReleased,
    SafetyEventKind::StaleFeedback,
];

/// Per-run hooks beyond the config file.
pub struct RunOptions {
    /// Polled once per tick; set it to stop the loop gracefully.
    pub shutdown: Arc<AtomicBool>,
    /// Replaces the controller named in the config.
    pub controller: Option<Box<dyn Controller>>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            shutdown: Arc::new(AtomicBool::new(false)),
            controller: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    Completed,
    Interrupted,
    Aborted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub outcome: RunOutcome,
    pub ticks: u64,
    pub stats: Option<RateStats>,
    pub events: Vec<(SafetyEventKind, u64)>,
    pub rows_recorded: u64,
    pub telemetry: Option<TelemetryStats>,
    /// Wall-clock seconds spent in the loop.
    pub wall_time: f64,
}

/// Zero-torque-then-Disable for a roster over a fresh bus handle. Used when
/// the control context cannot be trusted to do it.
#[derive(Debug, Clone)]
pub struct EmergencyStop {
    bus: BusConfig,
    targets: Vec<(ActuatorModelSpec, u32)>,
}

impl EmergencyStop {
    pub fn new(bus: BusConfig, targets: Vec<(ActuatorModelSpec, u32)>) -> Self {
        EmergencyStop { bus, targets }
    }

    pub fn execute(&self) -> Result<(), BusError> {
        let handle = bus::open(&self.bus)?;
        let mut first_err = None;
        for (model, id) in &self.targets {
            let frames = [
                encode_mit_command(&MitCommand::ZERO, model, *id)
                    .map(CanFrame::from)
                    .ok(),
                Some(CanFrame::from(encode_special(
                    SpecialFrameKind::Disable,
                    model.family,
                    *id,
                ))),
            ];
            for f in frames.into_iter().flatten() {
                if let Err(e) = handle.send(&f) {
                    first_err.get_or_insert(e);
                }
            }
        }
        handle.close();
        first_err.map_or(Ok(()), Err)
    }
}

static ARMED: Mutex<Option<EmergencyStop>> = Mutex::new(None);

fn arm(stop: Option<EmergencyStop>) {
    *ARMED.lock().unwrap_or_else(|p| p.into_inner()) = stop;
}

/// Runs the stop for the active run, if any. Safe to call from a signal
/// handler thread.
pub fn emergency_stop() -> bool {
    let stop = ARMED.lock().unwrap_or_else(|p| p.into_inner()).clone();
    match stop {
        Some(s) => {
            if let Err(e) = s.execute() {
                log::error!("emergency stop: {e}");
            }
            true
        }
        None => false,
    }
}

struct Wiring {
    group: ActuatorGroup,
    fleet: Option<(VirtualFleet, Arc<VirtualBus>, ResponderId)>,
}

fn wire(cfg: &RunConfig) -> Result<Wiring, CliError> {
    let time = if cfg.virtual_time {
        TimeSource::virtual_time()
    } else {
        TimeSource::real()
    };
    let roster: Vec<(&str, u32)> = cfg.actuators.iter().map(|a| (a.model.as_str(), a.can_id)).collect();
    let runtime = |e: &dyn std::fmt::Display| CliError::Runtime(format!("{}: {e}", cfg.bus));
    let (handle, fleet): (Arc<dyn CanBus>, _) = match cfg.bus.backend {
        Backend::Virtual => {
            let vb = Arc::new(
                VirtualBus::open(&cfg.bus.interface_name, cfg.bus.virtual_options.clone(), time)
                    .map_err(|e| runtime(&e))?,
            );
            let fleet = if cfg.spawn_fleet {
                let f = VirtualFleet::from_roster(&roster, cfg.fleet.params, cfg.fleet.step, ReplyMode::PerCommand)
                    .map_err(|e| CliError::Config(e.to_string()))?;
                let rid = f.attach(&vb);
                Some((f, vb.clone(), rid))
            } else {
                None
            };
            (vb, fleet)
        }
        Backend::OsSocket => (
            Arc::from(bus::open_with_time(&cfg.bus, time).map_err(|e| runtime(&e))?),
            None,
        ),
    };
    let group = ActuatorGroup::with_bus(&roster, handle, cfg.safety).map_err(|e| match e {
        GroupError::InvalidConfig(_) | GroupError::Codec(_) => CliError::Config(e.to_string()),
        e => CliError::Runtime(e.to_string()),
    })?;
    Ok(Wiring { group, fleet })
}

fn columns(ids: &[u32]) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    for id in ids {
        for f in ["target", "position", "velocity", "torque", "torque_cmd", "temperature"] {
            cols.push(format!("act{id}.{f}"));
        }
    }
    cols
}

struct Io {
    recorder: Option<Recorder>,
    telemetry: Option<TelemetryPublisher>,
    degraded_warned: bool,
}

/// Executes the configured controller. Whatever happens inside the loop,
/// every enabled actuator gets a zero command then Disable before return.
pub fn cmd_run(cfg: &RunConfig, opts: RunOptions, out: &mut dyn Write) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let recorder = match &cfg.record {
        Some(p) => Some(
            Recorder::open(
                p,
                &columns(&cfg.actuators.iter().map(|a| a.can_id).collect::<Vec<_>>()),
                cfg.recorder,
            )
            .map_err(|e| CliError::Runtime(e.to_string()))?,
        ),
        None => None,
    };
    let telemetry = match &cfg.telemetry {
        Some(d) => Some(TelemetryPublisher::open(d).map_err(|e| CliError::Runtime(e.to_string()))?),
        None => None,
    };
    let mut io = Io {
        recorder,
        telemetry,
        degraded_warned: false,
    };
    let Wiring { mut group, fleet } = wire(cfg)?;
    let targets = cfg
        .actuators
        .iter()
        .filter_map(|a| Some((lookup_model(&a.model).ok()?.clone(), a.can_id)))
        .collect();
    arm(Some(EmergencyStop {
        bus: cfg.bus.clone(),
        targets,
    }));

    let mut controller: Box<dyn Controller> = opts.controller.unwrap_or_else(|| Box::new(cfg.controller));
    let mut ticks = 0u64;
    let mut stats = None;
    let started = Instant::now();

    let enabled = group.enable_all();
    let result = if let Some((id, Err(e))) = enabled.iter().find(|(_, r)| r.is_err()) {
        Err(CliError::Runtime(format!("actuator {id} failed to enable: {e}")))
    } else {
        writeln!(out, "enabled {} actuators on {}", group.len(), cfg.bus).ok();
        let r = catch_unwind(AssertUnwindSafe(|| {
            control_loop(
                cfg,
                &mut group,
                controller.as_mut(),
                &mut io,
                &opts.shutdown,
                &mut ticks,
                &mut stats,
            )
        }));
        r.unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            Err(CliError::Runtime(format!("controller panicked: {msg}")))
        })
    };
    let wall_time = started.elapsed().as_secs_f64();

    let disabled = group.disable_all();
    let disable_err = disabled
        .iter()
        .find_map(|(id, r)| r.as_ref().err().map(|e| (*id, e.clone())));
    arm(None);
    if let Some((_, vb, rid)) = &fleet {
        vb.detach_responder(*rid);
    }

    let mut rows_recorded = 0;
    let mut close_err = None;
    if let Some(mut rec) = io.recorder.take() {
        if let Err(e) = rec.close() {
            close_err = Some(e);
        }
        rows_recorded = rec.status().rows_written();
    }
    let summary = RunSummary {
        outcome: match &result {
            Ok(o) => *o,
            Err(_) => RunOutcome::Aborted,
        },
        ticks,
        stats,
        events: EVENT_KINDS.iter().map(|k| (*k, group.event_count(*k))).collect(),
        rows_recorded,
        telemetry: io.telemetry.as_ref().map(TelemetryPublisher::stats),
        wall_time,
    };
    print_summary(out, cfg, &summary, &result);

    result?;
    if let Some((id, e)) = disable_err {
        return Err(CliError::Runtime(format!("actuator {id} may still be enabled: {e}")));
    }
    if let Some(e) = close_err {
        return Err(CliError::Runtime(format!("recording incomplete: {e}")));
    }
    Ok(summary)
}

fn command(group: &mut ActuatorGroup, id: u32, sp: Setpoint) -> Result<f64, CliError> {
    let echo = match sp {
        Setpoint::Torque(t) => group.command_torque(id, t),
        Setpoint::Position { position, kp, kd } => group.command_position(id, position, kp, kd),
        Setpoint::Velocity { velocity, kd } => group.command_velocity(id, velocity, kd),
        Setpoint::Impedance(c) => group.command_impedance(id, c),
    };
    match echo {
        Ok(e) => Ok(e.applied_torque()),
        Err(e @ (GroupError::NonFinite { .. } | GroupError::GainOutOfRange { .. })) => {
            Err(CliError::SafetyAbort(format!("rejected command: {e}")))
        }
        Err(e) => Err(CliError::Runtime(format!("command to actuator {id} failed: {e}"))),
    }
}

fn check(id: u32, s: &ActuatorState) -> Result<(), CliError> {
    if s.fault_code != 0 {
        return Err(CliError::SafetyAbort(format!(
            "actuator {id} reports fault code {:#04x}",
            s.fault_code
        )));
    }
    if s.stale {
        return Err(CliError::Runtime(format!("lost feedback from actuator {id}")));
    }
    Ok(())
}

fn control_loop(
    cfg: &RunConfig,
    group: &mut ActuatorGroup,
    controller: &mut dyn Controller,
    io: &mut Io,
    shutdown: &AtomicBool,
    ticks: &mut u64,
    stats: &mut Option<RateStats>,
) -> Result<RunOutcome, CliError> {
    let runtime = |e: GroupError| CliError::Runtime(e.to_string());
    let ids = group.can_ids();
    let mut clock = RateClock::new(cfg.frequency, group.time().clone()).map_err(|e| CliError::Config(e.to_string()))?;
    let t0 = clock.time().now_secs();
    let n = (cfg.duration * cfg.frequency).round() as u64;
    let mut targets = vec![0.0; ids.len()];
    let mut applied = vec![0.0; ids.len()];
    let mut outcome = RunOutcome::Completed;
    for _ in 0..n {
        clock.tick();
        *stats = clock.stats();
        if shutdown.load(Ordering::Acquire) {
            outcome = RunOutcome::Interrupted;
            break;
        }
        let t = clock.time().now_secs() - t0;
        for (k, &id) in ids.iter().enumerate() {
            let state = group.query_state(id).map_err(runtime)?;
            check(id, &state)?;
            let sp = controller.setpoint(t, id, &state);
            targets[k] = sp.target();
            applied[k] = command(group, id, sp)?;
        }
        let states = group.query_all().map_err(runtime)?;
        *ticks += 1;
        publish(io, t, &states, &targets, &applied)?;
    }
    Ok(outcome)
}

fn publish(
    io: &mut Io,
    t: f64,
    states: &[(u32, ActuatorState)],
    targets: &[f64],
    applied: &[f64],
) -> Result<(), CliError> {
    if let Some(p) = &io.telemetry {
        let mut rec = TelemetryRecord::new(t);
        for (k, (id, s)) in states.iter().enumerate() {
            let name = format!("act{id}");
            for (field, v) in [
                ("target", targets[k]),
                ("position", s.position),
                ("velocity", s.velocity),
                ("torque", s.torque),
                ("torque_cmd", applied[k]),
                ("temperature", s.temperature),
            ] {
                rec.insert_path(&[&name, field], v);
            }
        }
        if let Err(e) = p.publish(&rec) {
            log::warn!("telemetry: {e}");
        }
    }
    if let Some(r) = &mut io.recorder {
        let mut row = Vec::with_capacity(1 + 6 * states.len());
        row.push(Cell::Num(t));
        for (k, (_, s)) in states.iter().enumerate() {
            row.extend([targets[k], s.position, s.velocity, s.torque, applied[k], s.temperature].map(Cell::Num));
        }
        match r.log(row) {
            Ok(LogOutcome::Degraded { dropped }) if !io.degraded_warned => {
                io.degraded_warned = true;
                log::error!(
                    "recorder writer failed ({}), {dropped} rows dropped so far",
                    r.status().failed().unwrap_or_default()
                );
            }
            Ok(_) => {}
            Err(e) => return Err(CliError::Runtime(format!("recorder: {e}"))),
        }
    }
    Ok(())
}

fn print_summary(out: &mut dyn Write, cfg: &RunConfig, s: &RunSummary, result: &Result<RunOutcome, CliError>) {
    let status = match result {
        Ok(RunOutcome::Completed) => "completed".to_string(),
        Ok(RunOutcome::Interrupted) => "interrupted".to_string(),
        Ok(RunOutcome::Aborted) => "aborted".to_string(),
        Err(e) => format!("aborted: {e}"),
    };
    let _ = writeln!(out, "run {status} after {} ticks ({:.3} s wall)", s.ticks, s.wall_time);
    if let Some(st) = &s.stats {
        let _ = writeln!(out, "{st}");
    }
    let events: Vec<String> = s.events.iter().map(|(k, n)| format!("{k}={n}")).collect();
    let _ = writeln!(out, "safety events: {}", events.join(" "));
    if let Some(p) = &cfg.record {
        let _ = writeln!(out, "recorded {} rows to {}", s.rows_recorded, p.display());
    }
    if let Some(t) = &s.telemetry {
        let _ = writeln!(out, "telemetry: {} sent, {} dropped", t.sent, t.dropped);
    }
}
