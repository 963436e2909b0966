//! Bundled example controllers, one per command mode.

use std::f64::consts::TAU;
use std::fmt;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::actuation::ActuatorState;
use crate::protocol::{ActuatorModelSpec, MitCommand, QuantizationSpec};

/// What a controller asks of one actuator for one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Setpoint {
    Torque(f64),
    Position { position: f64, kp: f64, kd: f64 },
    Velocity { velocity: f64, kd: f64 },
    Impedance(MitCommand),
}

impl Setpoint {
    /// The tracked quantity, for logging.
    pub fn target(&self) -> f64 {
        match *self {
            Setpoint::Torque(t) => t,
            Setpoint::Position { position, .. } => position,
            Setpoint::Velocity { velocity, .. } => velocity,
            Setpoint::Impedance(c) => c.position,
        }
    }
}

/// A control law evaluated once per actuator per tick. `t` is seconds since
/// the loop started.
pub trait Controller: Send {
    fn setpoint(&mut self, t: f64, can_id: u32, state: &ActuatorState) -> Setpoint;
}

impl<F: FnMut(f64, u32, &ActuatorState) -> Setpoint + Send> Controller for F {
    fn setpoint(&mut self, t: f64, can_id: u32, state: &ActuatorState) -> Setpoint {
        self(t, can_id, state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ControllerName {
    SinePosition,
    TorqueStep,
    ImpedanceHold,
    VelocityRamp,
}

impl fmt::Display for ControllerName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ControllerName::SinePosition => "sine-position",
            ControllerName::TorqueStep => "torque-step",
            ControllerName::ImpedanceHold => "impedance-hold",
            ControllerName::VelocityRamp => "velocity-ramp",
        })
    }
}

/// θ_d(t) = offset + amplitude·sin(2π·frequency·t), position mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SineParams {
    /// rad
    pub amplitude: f64,
    /// Hz
    pub frequency: f64,
    /// rad
    pub offset: f64,
    pub kp: f64,
    pub kd: f64,
}

impl Default for SineParams {
    fn default() -> Self {
        SineParams {
            amplitude: 0.5,
            frequency: 0.5,
            offset: 0.0,
            kp: 30.0,
            kd: 1.0,
        }
    }
}

/// `initial` Nm until `step_time`, then `torque`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TorqueStepParams {
    pub initial: f64,
    pub torque: f64,
    /// Seconds.
    pub step_time: f64,
}

impl Default for TorqueStepParams {
    fn default() -> Self {
        TorqueStepParams {
            initial: 0.0,
            torque: 1.0,
            step_time: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImpedanceParams {
    /// rad
    pub setpoint: f64,
    pub kp: f64,
    pub kd: f64,
    /// Nm
    pub torque_ff: f64,
}

impl Default for ImpedanceParams {
    fn default() -> Self {
        ImpedanceParams {
            setpoint: 0.0,
            kp: 20.0,
            kd: 1.0,
            torque_ff: 0.0,
        }
    }
}

/// ω_d ramps at `acceleration` until it reaches `max_velocity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RampParams {
    /// rad/s²
    pub acceleration: f64,
    /// rad/s
    pub max_velocity: f64,
    pub kd: f64,
}

impl Default for RampParams {
    fn default() -> Self {
        RampParams {
            acceleration: 1.0,
            max_velocity: 2.0,
            kd: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ControllerKind {
    SinePosition(SineParams),
    TorqueStep(TorqueStepParams),
    ImpedanceHold(ImpedanceParams),
    VelocityRamp(RampParams),
}

impl ControllerKind {
    pub fn defaults(name: ControllerName) -> Self {
        match name {
            ControllerName::SinePosition => ControllerKind::SinePosition(SineParams::default()),
            ControllerName::TorqueStep => ControllerKind::TorqueStep(TorqueStepParams::default()),
            ControllerName::ImpedanceHold => ControllerKind::ImpedanceHold(ImpedanceParams::default()),
            ControllerName::VelocityRamp => ControllerKind::VelocityRamp(RampParams::default()),
        }
    }

    pub fn name(&self) -> ControllerName {
        match self {
            ControllerKind::SinePosition(_) => ControllerName::SinePosition,
            ControllerKind::TorqueStep(_) => ControllerName::TorqueStep,
            ControllerKind::ImpedanceHold(_) => ControllerName::ImpedanceHold,
            ControllerKind::VelocityRamp(_) => ControllerName::VelocityRamp,
        }
    }

    /// Gains must lie in the model's wire ranges; position and velocity
    /// targets must be representable. Torques are left to the safety layer.
    pub fn validate_for(&self, model: &ActuatorModelSpec) -> Result<(), String> {
        let within = |what: &str, v: f64, spec: &QuantizationSpec| {
            if v.is_finite() && v >= spec.min && v <= spec.max {
                Ok(())
            } else {
                Err(format!(
                    "{what} = {v} outside [{}, {}] for {}",
                    spec.min, spec.max, model.model_name
                ))
            }
        };
        let finite = |what: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(format!("{what} must be finite"))
            }
        };
        match *self {
            ControllerKind::SinePosition(p) => {
                within("kp", p.kp, &model.kp_spec)?;
                within("kd", p.kd, &model.kd_spec)?;
                finite("frequency", p.frequency)?;
                within(
                    "offset - |amplitude|",
                    p.offset - p.amplitude.abs(),
                    &model.position_spec,
                )?;
                within(
                    "offset + |amplitude|",
                    p.offset + p.amplitude.abs(),
                    &model.position_spec,
                )?;
                within(
                    "peak velocity",
                    TAU * p.frequency * p.amplitude.abs(),
                    &model.velocity_spec,
                )
            }
            ControllerKind::TorqueStep(p) => {
                finite("initial", p.initial)?;
                finite("torque", p.torque)?;
                finite("step_time", p.step_time)
            }
            ControllerKind::ImpedanceHold(p) => {
                within("kp", p.kp, &model.kp_spec)?;
                within("kd", p.kd, &model.kd_spec)?;
                within("setpoint", p.setpoint, &model.position_spec)?;
                finite("torque_ff", p.torque_ff)
            }
            ControllerKind::VelocityRamp(p) => {
                within("kd", p.kd, &model.kd_spec)?;
                finite("acceleration", p.acceleration)?;
                within("max_velocity", p.max_velocity, &model.velocity_spec)?;
                within("-max_velocity", -p.max_velocity, &model.velocity_spec)
            }
        }
    }
}

impl Controller for ControllerKind {
    fn setpoint(&mut self, t: f64, _can_id: u32, _state: &ActuatorState) -> Setpoint {
        match *self {
            ControllerKind::SinePosition(p) => Setpoint::Position {
                position: p.offset + p.amplitude * (TAU * p.frequency * t).sin(),
                kp: p.kp,
                kd: p.kd,
            },
            ControllerKind::TorqueStep(p) => Setpoint::Torque(if t < p.step_time { p.initial } else { p.torque }),
            ControllerKind::ImpedanceHold(p) => Setpoint::Impedance(MitCommand {
                position: p.setpoint,
                velocity: 0.0,
                kp: p.kp,
                kd: p.kd,
                torque_ff: p.torque_ff,
            }),
            ControllerKind::VelocityRamp(p) => {
                let v = (p.acceleration * t).abs().min(p.max_velocity.abs());
                Setpoint::Velocity {
                    velocity: v.copysign(p.acceleration * p.max_velocity),
                    kd: p.kd,
                }
            }
        }
    }
}
