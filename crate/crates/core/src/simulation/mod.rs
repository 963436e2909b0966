//! Software actuators standing in for hardware.

mod actuator;
mod fleet;
mod scenario;

pub use actuator::{default_step, ActuatorParams, VirtualActuator};
pub use fleet::{ActuatorSnapshot, FleetResponder, ReplyMode, VirtualFleet};
pub use scenario::{
    read_script, run_scenario, validate_script, write_script, ScriptAction, ScriptEvent, SimActuatorConfig, SimConfig,
    TimeMode, Trajectory, TrajectoryRow,
};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation parameters: {0}")]
    InvalidParams(String),
    #[error("CAN ID {0} is already in use")]
    DuplicateCanId(u32),
    #[error("no simulated actuator with CAN ID {0}")]
    UnknownCanId(u32),
    #[error("script line {index}: {reason}")]
    Script { index: usize, reason: String },
    #[error("i/o: {0}")]
    Io(String),
}

impl From<csv::Error> for SimError {
    fn from(e: csv::Error) -> Self {
        SimError::Io(e.to_string())
    }
}
