//! Actuator groups: registry, command dispatch in physical units, cached
//! state and the torque safety layer.

mod safety;

use std::collections::HashMap;
use std::sync::mpsc::Receiver;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::{self, BusConfig, BusError, CanBus, CanFrame};
use crate::protocol::{
    decode_feedback, encode_mit_command, encode_special, feedback_source, lookup_model, ActuatorModelSpec, CodecError,
    Family, MitCommand, QuantizationSpec, SpecialFrameKind,
};
use crate::time::TimeSource;

use safety::{ActuatorSafety, EventHub};
pub use safety::{
    RmsMonitor, SafetyConfig, SafetyEvent, SafetyEventKind, DEFAULT_RELEASE_HYSTERESIS, DEFAULT_RMS_WINDOW,
    STALENESS_PERIODS,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroupError {
    #[error("CAN ID {0} appears more than once in the group")]
    DuplicateCanId(u32),
    #[error("no actuator with CAN ID {0} in the group")]
    UnknownCanId(u32),
    #[error("actuator {0} is not enabled")]
    Disabled(u32),
    #[error("actuator {0} did not answer")]
    NotConnected(u32),
    #[error("actuator {can_id}: {gain} = {value} outside [{min}, {max}]")]
    GainOutOfRange {
        can_id: u32,
        gain: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("actuator {can_id}: {field} is not finite")]
    NonFinite { can_id: u32, field: &'static str },
    #[error("invalid safety config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Bus(#[from] BusError),
}

/// Outcome per actuator, in group order.
pub type PerActuator<T> = Vec<(u32, Result<T, GroupError>)>;

/// Last-known state of one actuator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorState {
    /// rad
    pub position: f64,
    /// rad/s
    pub velocity: f64,
    /// Nm
    pub torque: f64,
    /// °C
    pub temperature: f64,
    pub fault_code: u8,
    /// Bus time of the feedback frame, seconds.
    pub timestamp: f64,
    pub stale: bool,
}

impl Default for ActuatorState {
    fn default() -> Self {
        ActuatorState {
            position: 0.0,
            velocity: 0.0,
            torque: 0.0,
            temperature: 0.0,
            fault_code: 0,
            timestamp: 0.0,
            stale: true,
        }
    }
}

/// What a command op put on the bus.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandEcho {
    pub can_id: u32,
    /// The command as sent, after safety adjustment of the torque term.
    pub command: MitCommand,
    pub requested_torque: f64,
    pub events: Vec<SafetyEvent>,
}

impl CommandEcho {
    pub fn applied_torque(&self) -> f64 {
        self.command.torque_ff
    }
}

struct Entry {
    model: ActuatorModelSpec,
    can_id: u32,
    enabled: bool,
    /// An Enable went out since the last successful disable, answered or not.
    enable_sent: bool,
    state: ActuatorState,
    feedback_count: u64,
    safety: ActuatorSafety,
}

/// A set of actuators sharing one bus, driven from a single control context.
pub struct ActuatorGroup {
    entries: Vec<Entry>,
    index: HashMap<u32, usize>,
    families: Vec<Family>,
    bus: Arc<dyn CanBus>,
    safety: SafetyConfig,
    events: EventHub,
}

impl std::fmt::Debug for ActuatorGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ActuatorGroup")
            .field("can_ids", &self.can_ids())
            .field("safety", &self.safety)
            .finish()
    }
}

impl ActuatorGroup {
    /// Resolves models and opens the bus. All actuators start disabled.
    pub fn new<S: AsRef<str>>(
        specs: &[(S, u32)],
        bus_config: &BusConfig,
        safety: SafetyConfig,
    ) -> Result<Self, GroupError> {
        let entries = resolve(specs)?;
        safety.validate()?;
        let bus: Arc<dyn CanBus> = Arc::from(bus::open(bus_config)?);
        Self::build(entries, bus, safety)
    }

    /// Like [`ActuatorGroup::new`] on an already open bus handle.
    pub fn with_bus<S: AsRef<str>>(
        specs: &[(S, u32)],
        bus: Arc<dyn CanBus>,
        safety: SafetyConfig,
    ) -> Result<Self, GroupError> {
        let entries = resolve(specs)?;
        Self::build(entries, bus, safety)
    }

    fn build(
        models: Vec<(ActuatorModelSpec, u32)>,
        bus: Arc<dyn CanBus>,
        safety: SafetyConfig,
    ) -> Result<Self, GroupError> {
        safety.validate()?;
        let mut index = HashMap::new();
        let mut families = Vec::new();
        let mut entries = Vec::with_capacity(models.len());
        for (i, (model, can_id)) in models.into_iter().enumerate() {
            if index.insert(can_id, i).is_some() {
                return Err(GroupError::DuplicateCanId(can_id));
            }
            encode_mit_command(&MitCommand::ZERO, &model, can_id)?;
            if !families.contains(&model.family) {
                families.push(model.family);
            }
            entries.push(Entry {
                model,
                can_id,
                enabled: false,
                enable_sent: false,
                state: ActuatorState::default(),
                feedback_count: 0,
                safety: ActuatorSafety::new(safety.rms_window),
            });
        }
        Ok(ActuatorGroup {
            entries,
            index,
            families,
            bus,
            safety,
            events: EventHub::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn can_ids(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.can_id).collect()
    }

    pub fn model(&self, can_id: u32) -> Result<&ActuatorModelSpec, GroupError> {
        Ok(&self.entries[self.idx(can_id)?].model)
    }

    pub fn is_enabled(&self, can_id: u32) -> Result<bool, GroupError> {
        Ok(self.entries[self.idx(can_id)?].enabled)
    }

    pub fn safety_config(&self) -> &SafetyConfig {
        &self.safety
    }

    pub fn bus(&self) -> &Arc<dyn CanBus> {
        &self.bus
    }

    pub fn time(&self) -> &TimeSource {
        self.bus.time()
    }

    /// A receiver for every safety event raised from now on.
    pub fn subscribe(&mut self) -> Receiver<SafetyEvent> {
        self.events.subscribe()
    }

    /// Number of events of `kind` raised since construction.
    pub fn event_count(&self, kind: SafetyEventKind) -> u64 {
        self.events.count(kind)
    }

    fn idx(&self, can_id: u32) -> Result<usize, GroupError> {
        self.index.get(&can_id).copied().ok_or(GroupError::UnknownCanId(can_id))
    }

    fn staleness(&self) -> Duration {
        Duration::from_secs_f64(self.safety.staleness_window)
    }

    fn send_special(&self, i: usize, kind: SpecialFrameKind) -> Result<CanFrame, GroupError> {
        let e = &self.entries[i];
        let frame = CanFrame::from(encode_special(kind, e.model.family, e.can_id));
        Ok(self.bus.send(&frame)?)
    }

    /// Applies one received frame to the state cache if it is feedback from
    /// a group member.
    fn absorb(&mut self, frame: &CanFrame) {
        for &family in &self.families {
            let Some(src) = feedback_source(frame.arbitration_id, frame.is_extended, frame.payload(), family) else {
                continue;
            };
            let Some(&i) = self.index.get(&src) else {
                continue;
            };
            let e = &mut self.entries[i];
            if e.model.family != family {
                continue;
            }
            match decode_feedback(frame.arbitration_id, frame.payload(), &e.model) {
                Ok(fb) => {
                    e.state = ActuatorState {
                        position: fb.position,
                        velocity: fb.velocity,
                        torque: fb.torque,
                        temperature: fb.temperature,
                        fault_code: fb.fault_code,
                        timestamp: frame.timestamp.max(e.state.timestamp),
                        stale: false,
                    };
                    e.feedback_count += 1;
                }
                Err(err) => log::debug!("undecodable feedback {frame}: {err}"),
            }
            return;
        }
    }

    /// Drains every frame already received into the state cache.
    pub fn poll(&mut self) -> Result<usize, GroupError> {
        let mut n = 0;
        while let Some(f) = self.bus.try_recv()? {
            self.absorb(&f);
            n += 1;
        }
        Ok(n)
    }

    /// Waits until each actuator in `pending` has produced feedback beyond
    /// its recorded count, or the staleness window passes.
    fn await_replies(&mut self, pending: &mut Vec<(usize, u64)>) -> Result<(), GroupError> {
        let time = self.bus.time().clone();
        let deadline = time.now() + self.staleness();
        loop {
            pending.retain(|&(i, c)| self.entries[i].feedback_count <= c);
            if pending.is_empty() {
                return Ok(());
            }
            let now = time.now();
            if now >= deadline {
                return Ok(());
            }
            if let Some(f) = self.bus.recv(deadline - now)? {
                self.absorb(&f);
            }
        }
    }

    /// Sends Enable to each actuator. An actuator counts as enabled only once
    /// it answers within the staleness window.
    pub fn enable_all(&mut self) -> PerActuator<()> {
        self.ping_all(|_| SpecialFrameKind::Enable, true)
            .into_iter()
            .map(|(id, r)| {
                let r = r.and_then(|ok| if ok { Ok(()) } else { Err(GroupError::NotConnected(id)) });
                (id, r)
            })
            .collect()
    }

    /// Pings every actuator (Enable if enabled, Disable otherwise, so the
    /// gating state is unchanged). True iff feedback arrives in time.
    pub fn check_connection(&mut self) -> Vec<(u32, bool)> {
        let kinds: Vec<bool> = self.entries.iter().map(|e| e.enabled || e.enable_sent).collect();
        self.ping_all(
            |i| {
                if kinds[i] {
                    SpecialFrameKind::Enable
                } else {
                    SpecialFrameKind::Disable
                }
            },
            false,
        )
        .into_iter()
        .map(|(id, r)| (id, r.unwrap_or(false)))
        .collect()
    }

    #[allow(clippy::needless_range_loop)]
    fn ping_all(&mut self, kind: impl Fn(usize) -> SpecialFrameKind, mark_enabled: bool) -> PerActuator<bool> {
        if let Err(e) = self.poll() {
            return self.entries.iter().map(|x| (x.can_id, Err(e.clone()))).collect();
        }
        let mut out: Vec<Option<Result<bool, GroupError>>> = vec![None; self.entries.len()];
        let mut pending = Vec::new();
        for i in 0..self.entries.len() {
            let k = kind(i);
            match self.send_special(i, k) {
                Ok(_) => {
                    if k == SpecialFrameKind::Enable {
                        self.entries[i].enable_sent = true;
                    }
                    pending.push((i, self.entries[i].feedback_count))
                }
                Err(e) => out[i] = Some(Err(e)),
            }
        }
        let waiting = pending.clone();
        if let Err(e) = self.await_replies(&mut pending) {
            for &(i, _) in &waiting {
                out[i] = Some(Err(e.clone()));
            }
        }
        for (i, _) in waiting {
            if out[i].is_none() {
                let answered = !pending.iter().any(|&(p, _)| p == i);
                if mark_enabled && answered {
                    self.entries[i].enabled = true;
                }
                out[i] = Some(Ok(answered));
            }
        }
        self.entries
            .iter()
            .zip(out)
            .map(|(e, r)| (e.can_id, r.expect("every actuator resolved")))
            .collect()
    }

    /// For each enabled actuator, or one sent Enable without answering, sends
    /// an all-zero MIT command, then Disable.
    /// Send failures are reported per actuator and never stop the sweep.
    pub fn disable_all(&mut self) -> PerActuator<()> {
        let mut out = Vec::with_capacity(self.entries.len());
        for i in 0..self.entries.len() {
            let can_id = self.entries[i].can_id;
            if !self.entries[i].enabled && !self.entries[i].enable_sent {
                out.push((can_id, Ok(())));
                continue;
            }
            let zero = encode_mit_command(&MitCommand::ZERO, &self.entries[i].model, can_id)
                .map(CanFrame::from)
                .map_err(GroupError::from)
                .and_then(|f| Ok(self.bus.send(&f)?));
            let disable = self.send_special(i, SpecialFrameKind::Disable);
            let r = match (zero, disable) {
                (Ok(_), Ok(_)) => Ok(()),
                (Err(e), _) | (_, Err(e)) => Err(e),
            };
            if r.is_ok() {
                self.entries[i].enabled = false;
                self.entries[i].enable_sent = false;
            }
            out.push((can_id, r));
        }
        let _ = self.poll();
        out
    }

    /// Sends ZeroPosition to one actuator.
    pub fn zero_position(&mut self, can_id: u32) -> Result<(), GroupError> {
        let i = self.idx(can_id)?;
        self.send_special(i, SpecialFrameKind::ZeroPosition)?;
        self.poll()?;
        Ok(())
    }

    /// Runs the safety pipeline on a torque request and records the result
    /// in the RMS monitor.
    pub fn apply_safety(&mut self, can_id: u32, torque: f64) -> Result<(f64, Vec<SafetyEvent>), GroupError> {
        let i = self.idx(can_id)?;
        let now = self.bus.time().now_secs();
        let (tau, events) = self.filter(i, torque, now);
        self.entries[i].safety.monitor.push(now, tau);
        Ok((tau, events))
    }

    fn filter(&mut self, i: usize, torque: f64, now: f64) -> (f64, Vec<SafetyEvent>) {
        let e = &mut self.entries[i];
        let (tau, events) = e.safety.filter(
            &self.safety,
            e.model.rated_torque,
            e.model.peak_torque,
            e.can_id,
            torque,
            now,
        );
        for ev in &events {
            self.events.emit(*ev);
        }
        (tau, events)
    }

    pub fn command_torque(&mut self, can_id: u32, torque: f64) -> Result<CommandEcho, GroupError> {
        self.command_impedance(can_id, MitCommand::torque(torque))
    }

    pub fn command_position(
        &mut self,
        can_id: u32,
        position: f64,
        kp: f64,
        kd: f64,
    ) -> Result<CommandEcho, GroupError> {
        self.command_impedance(
            can_id,
            MitCommand {
                position,
                kp,
                kd,
                ..MitCommand::ZERO
            },
        )
    }

    pub fn command_velocity(&mut self, can_id: u32, velocity: f64, kd: f64) -> Result<CommandEcho, GroupError> {
        self.command_impedance(
            can_id,
            MitCommand {
                velocity,
                kd,
                ..MitCommand::ZERO
            },
        )
    }

    /// Sends a full five-field command with safety applied to the torque
    /// term. Gains outside the model's range are rejected, not clamped.
    pub fn command_impedance(&mut self, can_id: u32, cmd: MitCommand) -> Result<CommandEcho, GroupError> {
        let i = self.idx(can_id)?;
        let e = &self.entries[i];
        if !e.enabled {
            return Err(GroupError::Disabled(can_id));
        }
        for (field, v) in [
            ("position", cmd.position),
            ("velocity", cmd.velocity),
            ("kp", cmd.kp),
            ("kd", cmd.kd),
            ("torque", cmd.torque_ff),
        ] {
            if !v.is_finite() {
                return Err(GroupError::NonFinite { can_id, field });
            }
        }
        check_gain(can_id, "kp", cmd.kp, &e.model.kp_spec)?;
        check_gain(can_id, "kd", cmd.kd, &e.model.kd_spec)?;

        let now = self.bus.time().now_secs();
        let (tau, events) = self.filter(i, cmd.torque_ff, now);
        let sent = MitCommand { torque_ff: tau, ..cmd };
        let e = &self.entries[i];
        let frame = CanFrame::from(encode_mit_command(&sent, &e.model, can_id)?);
        self.bus.send(&frame)?;
        let estimate = commanded_torque(&sent, &e.state, e.model.peak_torque);
        self.entries[i].safety.monitor.push(now, estimate);
        self.poll()?;
        Ok(CommandEcho {
            can_id,
            command: sent,
            requested_torque: cmd.torque_ff,
            events,
        })
    }

    /// Latest cached state. Flags (and reports once) feedback older than the
    /// staleness window.
    pub fn query_state(&mut self, can_id: u32) -> Result<ActuatorState, GroupError> {
        let i = self.idx(can_id)?;
        self.poll()?;
        let now = self.bus.time().now_secs();
        let window = self.safety.staleness_window;
        let e = &mut self.entries[i];
        let age = now - e.state.timestamp;
        let stale = e.feedback_count == 0 || age > window;
        if stale && !e.state.stale {
            let ev = SafetyEvent {
                kind: SafetyEventKind::StaleFeedback,
                can_id,
                value: age,
                timestamp: now,
            };
            e.state.stale = true;
            self.events.emit(ev);
        }
        let e = &mut self.entries[i];
        e.state.stale = stale;
        Ok(e.state)
    }

    /// States of all actuators, in group order.
    pub fn query_all(&mut self) -> Result<Vec<(u32, ActuatorState)>, GroupError> {
        self.can_ids()
            .into_iter()
            .map(|id| Ok((id, self.query_state(id)?)))
            .collect()
    }

    /// RMS commanded torque over the trailing window, Nm.
    pub fn rms_torque(&mut self, can_id: u32) -> Result<f64, GroupError> {
        let i = self.idx(can_id)?;
        let now = self.bus.time().now_secs();
        Ok(self.entries[i].safety.monitor.rms(now))
    }

    pub fn thermal_limit_engaged(&self, can_id: u32) -> Result<bool, GroupError> {
        Ok(self.entries[self.idx(can_id)?].safety.engaged)
    }
}

fn resolve<S: AsRef<str>>(specs: &[(S, u32)]) -> Result<Vec<(ActuatorModelSpec, u32)>, GroupError> {
    specs
        .iter()
        .map(|(name, id)| Ok((lookup_model(name.as_ref())?.clone(), *id)))
        .collect()
}

fn check_gain(can_id: u32, gain: &'static str, value: f64, spec: &QuantizationSpec) -> Result<(), GroupError> {
    if value < spec.min || value > spec.max {
        return Err(GroupError::GainOutOfRange {
            can_id,
            gain,
            value,
            min: spec.min,
            max: spec.max,
        });
    }
    Ok(())
}

/// Torque the drive will produce for `cmd` given the cached state, for the
/// RMS monitor. Reduces to `torque_ff` when both gains are zero.
fn commanded_torque(cmd: &MitCommand, state: &ActuatorState, peak: f64) -> f64 {
    if cmd.kp == 0.0 && cmd.kd == 0.0 {
        return cmd.torque_ff;
    }
    let tau = cmd.torque_ff + cmd.kp * (cmd.position - state.position) + cmd.kd * (cmd.velocity - state.velocity);
    tau.clamp(-peak, peak)
}

#[cfg(test)]
mod tests;
