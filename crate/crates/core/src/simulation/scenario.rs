//! Scripted, single-context simulation runs.

use std::io::{Read, Write};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ActuatorParams, SimError, VirtualActuator};
use crate::protocol::{lookup_model, InboundFrame, MitCommand, SpecialFrameKind};
use crate::time::TimeSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeMode {
    /// Runs as fast as possible; fully deterministic.
    #[default]
    Virtual,
    /// Paces each integration step against the wall clock.
    RealTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimActuatorConfig {
    pub model: String,
    pub can_id: u32,
    #[serde(default = "ActuatorParams::fixture")]
    pub params: ActuatorParams,
    #[serde(default)]
    pub initial_position: f64,
    #[serde(default)]
    pub initial_velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Integration step, seconds.
    #[serde(default = "super::default_step")]
    pub step: f64,
    #[serde(default)]
    pub time_mode: TimeMode,
    /// Log one row every this many steps.
    #[serde(default = "one")]
    pub log_every: usize,
    /// Total simulated time; defaults to the last script event.
    #[serde(default)]
    pub duration: Option<f64>,
    pub actuators: Vec<SimActuatorConfig>,
}

fn one() -> usize {
    1
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(SimError::InvalidParams(format!("integration step {}", self.step)));
        }
        if self.log_every == 0 {
            return Err(SimError::InvalidParams("log_every must be at least 1".into()));
        }
        if let Some(d) = self.duration {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(SimError::InvalidParams(format!("duration {d}")));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for a in &self.actuators {
            a.params.validate()?;
            if !seen.insert(a.can_id) {
                return Err(SimError::DuplicateCanId(a.can_id));
            }
            lookup_model(&a.model).map_err(|e| SimError::InvalidParams(e.to_string()))?;
        }
        Ok(())
    }

    pub fn build_actuators(&self) -> Result<Vec<VirtualActuator>, SimError> {
        self.validate()?;
        self.actuators
            .iter()
            .map(|c| {
                let model = lookup_model(&c.model).map_err(|e| SimError::InvalidParams(e.to_string()))?;
                let mut a = VirtualActuator::new(model.clone(), c.can_id, c.params)?;
                a.set_state(c.initial_position, c.initial_velocity);
                Ok(a)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScriptAction {
    Enable,
    Disable,
    Zero,
    Command,
}

/// One timed script line. Command fields are ignored for control-plane
/// actions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptEvent {
    pub t: f64,
    pub can_id: u32,
    pub action: ScriptAction,
    #[serde(default)]
    pub position: f64,
    #[serde(default)]
    pub velocity: f64,
    #[serde(default)]
    pub kp: f64,
    #[serde(default)]
    pub kd: f64,
    #[serde(default)]
    pub torque_ff: f64,
}

impl ScriptEvent {
    pub fn control(t: f64, can_id: u32, action: ScriptAction) -> Self {
        ScriptEvent {
            t,
            can_id,
            action,
            position: 0.0,
            velocity: 0.0,
            kp: 0.0,
            kd: 0.0,
            torque_ff: 0.0,
        }
    }

    pub fn command(t: f64, can_id: u32, cmd: MitCommand) -> Self {
        ScriptEvent {
            t,
            can_id,
            action: ScriptAction::Command,
            position: cmd.position,
            velocity: cmd.velocity,
            kp: cmd.kp,
            kd: cmd.kd,
            torque_ff: cmd.torque_ff,
        }
    }

    fn inbound(&self) -> InboundFrame {
        match self.action {
            ScriptAction::Enable => InboundFrame::Special(SpecialFrameKind::Enable),
            ScriptAction::Disable => InboundFrame::Special(SpecialFrameKind::Disable),
            ScriptAction::Zero => InboundFrame::Special(SpecialFrameKind::ZeroPosition),
            ScriptAction::Command => InboundFrame::Command(MitCommand {
                position: self.position,
                velocity: self.velocity,
                kp: self.kp,
                kd: self.kd,
                torque_ff: self.torque_ff,
            }),
        }
    }
}

/// Checks ordering, finiteness and addressing of a script.
pub fn validate_script(config: &SimConfig, script: &[ScriptEvent]) -> Result<(), SimError> {
    let mut last = f64::NEG_INFINITY;
    for (i, ev) in script.iter().enumerate() {
        let bad = |reason: String| SimError::Script { index: i, reason };
        let fields = [ev.t, ev.position, ev.velocity, ev.kp, ev.kd, ev.torque_ff];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite value".into()));
        }
        if ev.t < 0.0 {
            return Err(bad(format!("negative time {}", ev.t)));
        }
        if ev.t < last {
            return Err(bad(format!("time {} precedes previous event at {last}", ev.t)));
        }
        if !config.actuators.iter().any(|a| a.can_id == ev.can_id) {
            return Err(bad(format!("no actuator with CAN ID {}", ev.can_id)));
        }
        last = ev.t;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub can_id: u32,
    pub position: f64,
    pub velocity: f64,
    pub torque: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
}

impl Trajectory {
    /// Rows of one actuator, in time order.
    pub fn for_actuator(&self, can_id: u32) -> impl Iterator<Item = &TrajectoryRow> {
        self.rows.iter().filter(move |r| r.can_id == can_id)
    }

    pub fn write_csv<W: Write>(&self, out: W, delimiter: u8) -> Result<(), SimError> {
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
        w.write_record(["t", "can_id", "position", "velocity", "torque", "temperature"])?;
        for r in &self.rows {
            w.write_record([
                r.t.to_string(),
                r.can_id.to_string(),
                r.position.to_string(),
                r.velocity.to_string(),
                r.torque.to_string(),
                r.temperature.to_string(),
            ])?;
        }
        w.flush().map_err(|e| SimError::Io(e.to_string()))
    }

    pub fn read_csv<R: Read>(input: R, delimiter: u8) -> Result<Self, SimError> {
        let mut r = csv::ReaderBuilder::new().delimiter(delimiter).from_reader(input);
        let rows = r.deserialize().collect::<Result<Vec<TrajectoryRow>, _>>()?;
        Ok(Trajectory { rows })
    }
}

pub fn read_script<R: Read>(input: R, delimiter: u8) -> Result<Vec<ScriptEvent>, SimError> {
    let mut r = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(input);
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| SimError::Script {
                index: i,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn write_script<W: Write>(script: &[ScriptEvent], out: W, delimiter: u8) -> Result<(), SimError> {
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
    for ev in script {
        w.serialize(ev)?;
    }
    w.flush().map_err(|e| SimError::Io(e.to_string()))
}

/// Runs a script against freshly built actuators.
///
/// Time advances in whole integration steps. Events whose time has been
/// reached are applied at the start of a step; each actuator is logged
/// (every `log_every` steps) with the torque it applies during that step.
pub fn run_scenario(config: &SimConfig, script: &[ScriptEvent]) -> Result<Trajectory, SimError> {
    validate_script(config, script)?;
    let mut actuators = config.build_actuators()?;
    let h = config.step;
    let duration = config.duration.unwrap_or_else(|| script.last().map_or(0.0, |e| e.t));
    let steps = (duration / h).round() as u64;
    let clock = match config.time_mode {
        TimeMode::Virtual => None,
        TimeMode::RealTime => Some(TimeSource::real()),
    };

    let mut traj = Trajectory::default();
    let mut next_event = 0;
    for k in 0..=steps {
        let t = k as f64 * h;
        if let Some(c) = &clock {
            c.sleep_until(Duration::from_secs_f64(t));
        }
        // tolerance absorbs k·h rounding for events placed on step boundaries
        while next_event < script.len() && script[next_event].t <= t + h * 1e-9 {
            let ev = &script[next_event];
            if let Some(a) = actuators.iter_mut().find(|a| a.can_id() == ev.can_id) {
                a.handle(ev.inbound());
            }
            next_event += 1;
        }
        let log_now = (k as usize).is_multiple_of(config.log_every);
        for a in actuators.iter_mut() {
            let tau = a.applied_torque();
            if log_now {
                traj.rows.push(TrajectoryRow {
                    t,
                    can_id: a.can_id(),
                    position: a.position(),
                    velocity: a.velocity(),
                    torque: tau,
                    temperature: a.temperature(),
                });
            }
            if k < steps {
                a.step(h);
            }
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(step: f64) -> SimConfig {
        SimConfig {
            step,
            time_mode: TimeMode::Virtual,
            log_every: 1,
            duration: Some(2.0),
            actuators: vec![SimActuatorConfig {
                model: "AK80-9".into(),
                can_id: 1,
                params: ActuatorParams::fixture(),
                initial_position: 0.0,
                initial_velocity: 0.0,
            }],
        }
    }

    fn pd_step() -> Vec<ScriptEvent> {
        vec![
            ScriptEvent::control(0.0, 1, ScriptAction::Enable),
            ScriptEvent::command(
                0.0,
                1,
                MitCommand {
                    position: 1.0,
                    kp: 10.0,
                    kd: 1.0,
                    ..MitCommand::ZERO
                },
            ),
        ]
    }

    #[test]
    fn empty_script_keeps_initial_state() {
        let mut c = cfg(0.001);
        c.actuators[0].initial_position = 0.7;
        let t = run_scenario(&c, &[]).unwrap();
        assert_eq!(t.rows.len(), 2001);
        assert!(t
            .rows
            .iter()
            .all(|r| r.position == 0.7 && r.velocity == 0.0 && r.torque == 0.0));
    }

    #[test]
    fn runs_are_bit_identical() {
        let a = run_scenario(&cfg(0.001), &pd_step()).unwrap();
        let b = run_scenario(&cfg(0.001), &pd_step()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pd_step_settles() {
        let t = run_scenario(&cfg(0.001), &pd_step()).unwrap();
        let last = t.rows.last().unwrap();
        assert!((last.position - 1.0).abs() < 0.05, "{}", last.position);
    }

    #[test]
    fn logged_torque_never_exceeds_peak() {
        let script = vec![
            ScriptEvent::control(0.0, 1, ScriptAction::Enable),
            ScriptEvent::command(
                0.0,
                1,
                MitCommand {
                    position: 10.0,
                    kp: 500.0,
                    kd: 0.0,
                    ..MitCommand::ZERO
                },
            ),
        ];
        let t = run_scenario(&cfg(0.001), &script).unwrap();
        assert!(t.rows.iter().all(|r| r.torque.abs() <= 18.0));
        assert!(t.rows.iter().any(|r| r.torque == 18.0));
    }

    #[test]
    fn malformed_scripts_rejected() {
        let mut s = pd_step();
        s[0].t = 1.0;
        assert!(matches!(
            run_scenario(&cfg(0.001), &s),
            Err(SimError::Script { index: 1, .. })
        ));
        let s = vec![ScriptEvent::control(0.0, 9, ScriptAction::Enable)];
        assert!(matches!(
            run_scenario(&cfg(0.001), &s),
            Err(SimError::Script { index: 0, .. })
        ));
        let mut s = pd_step();
        s[1].kp = f64::NAN;
        assert!(run_scenario(&cfg(0.001), &s).is_err());
    }

    #[test]
    fn script_and_trajectory_csv_round_trip() {
        let script = pd_step();
        let mut buf = Vec::new();
        write_script(&script, &mut buf, b',').unwrap();
        assert_eq!(read_script(&buf[..], b',').unwrap(), script);

        let mut c = cfg(0.01);
        c.duration = Some(0.1);
        let traj = run_scenario(&c, &script).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf, b';').unwrap();
        assert!(buf.starts_with(b"t;can_id;position"));
        assert_eq!(Trajectory::read_csv(&buf[..], b';').unwrap(), traj);
    }

    #[test]
    fn duplicate_ids_in_config_rejected() {
        let mut c = cfg(0.001);
        c.actuators.push(c.actuators[0].clone());
        assert!(matches!(c.validate(), Err(SimError::DuplicateCanId(1))));
    }
}
