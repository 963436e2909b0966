use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::protocol::{ActuatorModelSpec, Family, InboundFrame, MitCommand, MitFeedback, SpecialFrameKind};

/// Rotor and thermal parameters of one simulated actuator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActuatorParams {
    /// kg·m²
    pub inertia: f64,
    /// Nm·s/rad
    pub damping: f64,
    /// °C
    pub ambient: f64,
    /// °C per Nm²·s
    pub heating: f64,
    /// 1/s
    pub cooling: f64,
}

#[derive(Deserialize)]
struct DefaultsFile {
    step: f64,
    actuator: ActuatorParams,
}

static DEFAULTS: LazyLock<DefaultsFile> =
    LazyLock::new(|| toml::from_str(include_str!("../../data/sim_defaults.toml")).expect("valid sim defaults"));

/// Default integration step in seconds.
pub fn default_step() -> f64 {
    DEFAULTS.step
}

impl Default for ActuatorParams {
    fn default() -> Self {
        // Mirrors data/sim_defaults.toml (pinned by a test).
        ActuatorParams {
            inertia: 0.01,
            damping: 0.05,
            ambient: 25.0,
            heating: 0.05,
            cooling: 0.02,
        }
    }
}

impl ActuatorParams {
    pub fn fixture() -> Self {
        DEFAULTS.actuator
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.inertia > 0.0
            && self.damping >= 0.0
            && self.heating >= 0.0
            && self.cooling >= 0.0
            && [self.inertia, self.damping, self.ambient, self.heating, self.cooling]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidParams(format!("{self:?}")))
        }
    }
}

/// One simulated actuator running the on-board MIT law over rigid-rotor
/// dynamics `J·θ̈ = τ − b·ω`.
#[derive(Debug, Clone)]
pub struct VirtualActuator {
    model: ActuatorModelSpec,
    can_id: u32,
    params: ActuatorParams,
    theta: f64,
    omega: f64,
    zero_offset: f64,
    temperature: f64,
    last_command: MitCommand,
    enabled: bool,
}

impl VirtualActuator {
    pub fn new(model: ActuatorModelSpec, can_id: u32, params: ActuatorParams) -> Result<Self, SimError> {
        params.validate()?;
        Ok(VirtualActuator {
            model,
            can_id,
            params,
            theta: 0.0,
            omega: 0.0,
            zero_offset: 0.0,
            temperature: params.ambient,
            last_command: MitCommand::ZERO,
            enabled: false,
        })
    }

    pub fn can_id(&self) -> u32 {
        self.can_id
    }

    pub fn model(&self) -> &ActuatorModelSpec {
        &self.model
    }

    pub fn params(&self) -> &ActuatorParams {
        &self.params
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn last_command(&self) -> MitCommand {
        self.last_command
    }

    /// Position relative to the last zeroing, in rad.
    pub fn position(&self) -> f64 {
        self.theta - self.zero_offset
    }

    pub fn velocity(&self) -> f64 {
        self.omega
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Overrides the mechanical state; the zero offset is kept.
    pub fn set_state(&mut self, position: f64, velocity: f64) {
        self.theta = position + self.zero_offset;
        self.omega = velocity;
    }

    pub fn set_enabled(&mut self, on: bool) {
        self.enabled = on;
    }

    pub fn set_command(&mut self, cmd: MitCommand) {
        self.last_command = cmd;
    }

    /// Torque the drive produces right now, clamped to ±peak; zero when
    /// disabled.
    pub fn applied_torque(&self) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        let c = &self.last_command;
        let tau = c.torque_ff + c.kp * (c.position - self.position()) + c.kd * (c.velocity - self.omega);
        tau.clamp(-self.model.peak_torque, self.model.peak_torque)
    }

    /// Advances by `dt` with semi-implicit Euler. Returns the applied torque
    /// used for the step.
    pub fn step(&mut self, dt: f64) -> f64 {
        let tau = self.applied_torque();
        let p = &self.params;
        self.omega += (tau - p.damping * self.omega) / p.inertia * dt;
        self.theta += self.omega * dt;
        self.temperature += (p.heating * tau * tau - p.cooling * (self.temperature - p.ambient)) * dt;
        tau
    }

    /// Integrates over `span` seconds in steps no longer than `max_step`.
    pub fn integrate(&mut self, span: f64, max_step: f64) {
        let mut left = span;
        while left > 1e-15 {
            let dt = left.min(max_step);
            self.step(dt);
            left -= dt;
        }
    }

    /// Applies a decoded host frame. Returns whether the actuator answers it
    /// under the reply-per-command model.
    pub fn handle(&mut self, frame: InboundFrame) -> bool {
        match frame {
            InboundFrame::Special(SpecialFrameKind::Enable) => {
                self.enabled = true;
                true
            }
            InboundFrame::Special(SpecialFrameKind::Disable) => {
                self.enabled = false;
                self.last_command = MitCommand::ZERO;
                true
            }
            InboundFrame::Special(SpecialFrameKind::ZeroPosition) => {
                self.zero_offset = self.theta;
                true
            }
            InboundFrame::Command(cmd) => {
                if self.enabled {
                    self.last_command = cmd;
                }
                self.enabled
            }
        }
    }

    fn fault_code(&self) -> u8 {
        if self.temperature <= self.model.max_temperature {
            return 0;
        }
        match self.model.family {
            Family::CubeMars => 1,
            Family::RobStride | Family::CyberGear => 0b100,
        }
    }

    pub fn feedback(&self) -> MitFeedback {
        MitFeedback {
            can_id: self.can_id,
            position: self.position(),
            velocity: self.omega,
            torque: self.applied_torque(),
            temperature: self.temperature,
            fault_code: self.fault_code(),
        }
    }
}
