pub mod actuation;
pub mod bus;
pub mod cli;
pub mod clocking;
pub mod protocol;
pub mod recorder;
pub mod sensing;
pub mod simulation;
pub mod telemetry;
pub mod time;
